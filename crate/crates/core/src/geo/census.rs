//! Census cartographic-boundary and ACS 5-year URL builders.

use super::GeoError;
use crate::secrets::Placeholder;

pub const BOUNDARY_BASE: &str = "https://www2.census.gov/geo/tiger";
pub const ACS_BASE: &str = "https://api.census.gov/data";
pub const CENSUS_ALIAS: &str = "US_Census_demography";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryLayer {
    State,
    County,
    Tract,
    BlockGroup,
}

impl BoundaryLayer {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::State => "state",
            Self::County => "county",
            Self::Tract => "tract",
            Self::BlockGroup => "bg",
        }
    }

    fn needs_state(self) -> bool {
        matches!(self, Self::Tract | Self::BlockGroup)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BoundaryScope {
    Nation,
    State(StateFips),
}

/// Two-digit state FIPS code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateFips(String);

impl StateFips {
    pub fn new(code: &str) -> Result<Self, GeoError> {
        let ok = code.len() == 2 && code.chars().all(|c| c.is_ascii_digit()) && code != "00";
        if ok {
            Ok(Self(code.to_string()))
        } else {
            Err(GeoError::BadFips(code.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

pub fn build_census_boundary_url(
    year: u16,
    layer: BoundaryLayer,
    scope: &BoundaryScope,
) -> Result<String, GeoError> {
    let scope = match scope {
        BoundaryScope::Nation if layer.needs_state() => {
            return Err(GeoError::ScopeRequired(layer.as_str()))
        }
        BoundaryScope::Nation => "us",
        BoundaryScope::State(f) => f.as_str(),
    };
    Ok(format!(
        "{BOUNDARY_BASE}/GENZ{year}/shp/cb_{year}_{scope}_{}_500k.zip",
        layer.as_str()
    ))
}

/// `for=`/`in=` geography clauses, e.g. `("county:*", Some("state:42"))`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Geography {
    pub for_clause: String,
    pub in_clause: Option<String>,
}

impl Geography {
    pub fn counties_in_state(fips: &StateFips) -> Self {
        Self {
            for_clause: "county:*".into(),
            in_clause: Some(format!("state:{}", fips.as_str())),
        }
    }
}

/// Detailed-table variable code: group letter(s), digits, optional
/// iteration letter, `_`, three digits, suffix letter(s), e.g.
/// `B01003_001E` or `B19013A_001M`.
pub fn is_variable_code(code: &str) -> bool {
    let Some((group, item)) = code.split_once('_') else {
        return false;
    };
    let letters = group.chars().take_while(|c| c.is_ascii_uppercase()).count();
    let rest = &group[letters..];
    let digits = rest.chars().take_while(|c| c.is_ascii_digit()).count();
    let tail = &rest[digits..];
    let group_ok = (1..=2).contains(&letters)
        && (3..=6).contains(&digits)
        && tail.len() <= 1
        && tail.chars().all(|c| c.is_ascii_uppercase());
    let item_digits = item.chars().take_while(|c| c.is_ascii_digit()).count();
    let suffix = &item[item_digits..];
    let item_ok = item_digits == 3
        && (1..=2).contains(&suffix.len())
        && suffix.chars().all(|c| c.is_ascii_uppercase());
    group_ok && item_ok
}

/// ACS 5-year query URL. With `with_key`, an API-key placeholder is
/// appended for later injection.
pub fn build_acs_url(
    year: u16,
    variables: &[&str],
    geo: &Geography,
    with_key: bool,
) -> Result<String, GeoError> {
    if variables.is_empty() {
        return Err(GeoError::EmptyVariables);
    }
    if let Some(bad) = variables.iter().find(|v| !is_variable_code(v)) {
        return Err(GeoError::BadVariableCode(bad.to_string()));
    }
    let mut url = format!(
        "{ACS_BASE}/{year}/acs/acs5?get=NAME,{}&for={}",
        variables.join(","),
        geo.for_clause
    );
    if let Some(i) = &geo.in_clause {
        url.push_str("&in=");
        url.push_str(i);
    }
    if with_key {
        let p = Placeholder::new(CENSUS_ALIAS, "api_key").expect("valid placeholder");
        url.push_str("&key=");
        url.push_str(&p.token());
    }
    Ok(url)
}
