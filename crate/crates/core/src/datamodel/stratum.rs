use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Oldest single-year age group; it holds everyone aged 95 and over.
pub const MAX_AGE_GROUP: u8 = 95;
pub const AGE_GROUPS: usize = MAX_AGE_GROUP as usize + 1;
pub const STRATUM_COUNT: usize = 2 * AGE_GROUPS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub const ALL: [Sex; 2] = [Sex::Male, Sex::Female];

    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(Sex::Male),
            "female" | "f" => Ok(Sex::Female),
            other => Err(Error::Domain(format!("unknown sex {other:?}"))),
        }
    }
}

/// One (sex, single-year age group) cell of the population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StratumKey {
    sex: Sex,
    age_group: u8,
}

impl StratumKey {
    pub fn new(sex: Sex, age_group: u32) -> Result<Self> {
        if age_group > MAX_AGE_GROUP as u32 {
            return Err(Error::Domain(format!(
                "age group {age_group} outside 0..={MAX_AGE_GROUP}"
            )));
        }
        Ok(Self {
            sex,
            age_group: age_group as u8,
        })
    }

    pub fn sex(self) -> Sex {
        self.sex
    }

    pub fn age_group(self) -> u32 {
        self.age_group as u32
    }

    /// Position in the canonical sex-major, age-minor ordering.
    pub fn index(self) -> usize {
        let sex = match self.sex {
            Sex::Male => 0,
            Sex::Female => 1,
        };
        sex * AGE_GROUPS + self.age_group as usize
    }

    pub fn from_index(index: usize) -> Self {
        assert!(index < STRATUM_COUNT, "stratum index {index} out of range");
        Self {
            sex: if index < AGE_GROUPS { Sex::Male } else { Sex::Female },
            age_group: (index % AGE_GROUPS) as u8,
        }
    }

    pub fn age_label(self) -> String {
        age_label(self.age_group as u32)
    }
}

pub fn age_label(age_group: u32) -> String {
    if age_group == MAX_AGE_GROUP as u32 {
        format!("{MAX_AGE_GROUP}+")
    } else {
        age_group.to_string()
    }
}

/// Parses `"42"`, `"95"` or `"95+"`.
pub fn parse_age_group(s: &str) -> Result<u32> {
    let s = s.trim();
    let digits = s.strip_suffix('+').unwrap_or(s);
    let age: u32 = digits
        .parse()
        .map_err(|_| Error::Domain(format!("bad age group {s:?}")))?;
    if s.ends_with('+') && age != MAX_AGE_GROUP as u32 {
        return Err(Error::Domain(format!("only {MAX_AGE_GROUP}+ may be open-ended")));
    }
    if age > MAX_AGE_GROUP as u32 {
        return Err(Error::Domain(format!(
            "age group {age} outside 0..={MAX_AGE_GROUP}"
        )));
    }
    Ok(age)
}

impl fmt::Display for StratumKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.sex, self.age_label())
    }
}

/// All 192 strata, males first, ages ascending within sex.
pub fn enumerate_strata() -> Vec<StratumKey> {
    (0..STRATUM_COUNT).map(StratumKey::from_index).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_order() {
        let strata = enumerate_strata();
        assert_eq!(strata.len(), 192);
        assert_eq!(strata[0], StratumKey::new(Sex::Male, 0).unwrap());
        assert_eq!(strata[191], StratumKey::new(Sex::Female, 95).unwrap());
        assert_eq!(strata, enumerate_strata());
        for (i, s) in strata.iter().enumerate() {
            assert_eq!(s.index(), i);
        }
    }

    #[test]
    fn age_parsing() {
        assert_eq!(parse_age_group("95+").unwrap(), 95);
        assert_eq!(parse_age_group("95").unwrap(), 95);
        assert_eq!(parse_age_group("0").unwrap(), 0);
        assert!(parse_age_group("96").is_err());
        assert!(parse_age_group("80+").is_err());
        assert!(StratumKey::new(Sex::Male, 96).is_err());
    }

    #[test]
    fn sex_parsing() {
        assert_eq!("Female".parse::<Sex>().unwrap(), Sex::Female);
        assert!("other".parse::<Sex>().is_err());
    }
}
