//! Air-quality index categories and the binary event partition.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Four ordered AQI categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AqiClass {
    Good = 0,
    Moderate = 1,
    Bad = 2,
    VeryBad = 3,
}

impl AqiClass {
    pub const ALL: [AqiClass; 4] = [
        AqiClass::Good,
        AqiClass::Moderate,
        AqiClass::Bad,
        AqiClass::VeryBad,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            AqiClass::Good => "good",
            AqiClass::Moderate => "moderate",
            AqiClass::Bad => "bad",
            AqiClass::VeryBad => "verybad",
        }
    }
}

impl fmt::Display for AqiClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pollutant {
    Pm25,
    Pm10,
}

impl Pollutant {
    /// Channel index of this pollutant in a [`GridField`](crate::field::GridField).
    pub fn channel(self) -> usize {
        match self {
            Pollutant::Pm25 => crate::field::CH_PM25,
            Pollutant::Pm10 => crate::field::CH_PM10,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Pollutant::Pm25 => "pm25",
            Pollutant::Pm10 => "pm10",
        }
    }
}

impl FromStr for Pollutant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pm25" | "pm2.5" => Ok(Pollutant::Pm25),
            "pm10" => Ok(Pollutant::Pm10),
            other => Err(Error::InvalidInput(format!("unknown pollutant `{other}`"))),
        }
    }
}

/// Ascending breakpoints in µg/m³. A value equal to a breakpoint falls in the
/// lower class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AqiThresholds {
    pub pm25: [f64; 3],
    pub pm10: [f64; 3],
}

impl Default for AqiThresholds {
    fn default() -> Self {
        Self {
            pm25: [15.0, 35.0, 75.0],
            pm10: [30.0, 80.0, 150.0],
        }
    }
}

impl AqiThresholds {
    pub fn new(pm25: [f64; 3], pm10: [f64; 3]) -> Result<Self> {
        let t = Self { pm25, pm10 };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("pm25", &self.pm25), ("pm10", &self.pm10)] {
            let ok = b.iter().all(|v| v.is_finite() && *v > 0.0) && b[0] < b[1] && b[1] < b[2];
            if !ok {
                return Err(Error::Config(format!(
                    "aqi.{name} breakpoints must be positive and strictly increasing, got {b:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn breakpoints(&self, pollutant: Pollutant) -> &[f64; 3] {
        match pollutant {
            Pollutant::Pm25 => &self.pm25,
            Pollutant::Pm10 => &self.pm10,
        }
    }

    /// Classification without input checks, for hot loops over values that
    /// are already known to be finite and non-negative.
    #[inline]
    pub fn class_of(&self, value: f64, pollutant: Pollutant) -> AqiClass {
        let [t1, t2, t3] = *self.breakpoints(pollutant);
        if value <= t1 {
            AqiClass::Good
        } else if value <= t2 {
            AqiClass::Moderate
        } else if value <= t3 {
            AqiClass::Bad
        } else {
            AqiClass::VeryBad
        }
    }
}

pub fn aqi_classify(value: f64, pollutant: Pollutant, thresholds: &AqiThresholds) -> Result<AqiClass> {
    if !value.is_finite() || value < 0.0 {
        return Err(Error::InvalidInput(format!(
            "concentration must be finite and non-negative, got {value}"
        )));
    }
    Ok(thresholds.class_of(value, pollutant))
}

/// Event flag: `true` for Bad and VeryBad.
#[inline]
pub fn binarize(class: AqiClass) -> bool {
    class >= AqiClass::Bad
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_examples() {
        let t = AqiThresholds::default();
        assert_eq!(aqi_classify(0.0, Pollutant::Pm25, &t).unwrap(), AqiClass::Good);
        assert_eq!(aqi_classify(40.0, Pollutant::Pm25, &t).unwrap(), AqiClass::Bad);
        assert_eq!(aqi_classify(151.0, Pollutant::Pm10, &t).unwrap(), AqiClass::VeryBad);
    }

    #[test]
    fn breakpoints_are_lower_inclusive() {
        let t = AqiThresholds::default();
        assert_eq!(aqi_classify(15.0, Pollutant::Pm25, &t).unwrap(), AqiClass::Good);
        assert_eq!(aqi_classify(35.0, Pollutant::Pm25, &t).unwrap(), AqiClass::Moderate);
        assert_eq!(aqi_classify(75.0, Pollutant::Pm25, &t).unwrap(), AqiClass::Bad);
        assert_eq!(
            aqi_classify(75.000001, Pollutant::Pm25, &t).unwrap(),
            AqiClass::VeryBad
        );
    }

    #[test]
    fn rejects_bad_values() {
        let t = AqiThresholds::default();
        assert!(aqi_classify(-0.1, Pollutant::Pm25, &t).is_err());
        assert!(aqi_classify(f64::NAN, Pollutant::Pm25, &t).is_err());
        assert!(aqi_classify(f64::INFINITY, Pollutant::Pm10, &t).is_err());
    }

    #[test]
    fn thresholds_validation() {
        assert!(AqiThresholds::new([15.0, 15.0, 75.0], [30.0, 80.0, 150.0]).is_err());
        assert!(AqiThresholds::new([0.0, 15.0, 75.0], [30.0, 80.0, 150.0]).is_err());
        assert!(AqiThresholds::new([1.0, 2.0, 3.0], [4.0, 5.0, 6.0]).is_ok());
    }

    #[test]
    fn binary_partition() {
        assert!(!binarize(AqiClass::Good));
        assert!(!binarize(AqiClass::Moderate));
        assert!(binarize(AqiClass::Bad));
        assert!(binarize(AqiClass::VeryBad));
    }

    proptest! {
        #[test]
        fn classification_is_monotone(a in 0.0f64..400.0, b in 0.0f64..400.0) {
            let t = AqiThresholds::default();
            for p in [Pollutant::Pm25, Pollutant::Pm10] {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(t.class_of(lo, p) <= t.class_of(hi, p));
            }
        }

        #[test]
        fn event_partition_sits_at_second_breakpoint(v in 0.0f64..400.0) {
            let t = AqiThresholds::default();
            prop_assert_eq!(binarize(t.class_of(v, Pollutant::Pm25)), v > 35.0);
            prop_assert_eq!(binarize(t.class_of(v, Pollutant::Pm10)), v > 80.0);
        }
    }
}
