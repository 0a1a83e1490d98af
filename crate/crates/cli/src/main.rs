fn main() {
    std::process::exit(faker_air_cli::run(std::env::args_os()));
}
