//! Global DEM request builder.

use std::fmt;
use std::str::FromStr;

use super::{BBox, GeoError};
use crate::secrets::Placeholder;

pub const DEM_ENDPOINT: &str = "https://portal.opentopography.org/API/globaldem";
pub const DEM_ALIAS: &str = "OpenTopography";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DemType {
    Srtmgl3,
    Srtmgl1,
    Srtmgl1E,
    Aw3d30,
    Srtm15Plus,
    Nasadem,
    Cop30,
    EuDtm,
    GediL3,
    GebcoIceTopo,
    GebcoSubIceTopo,
}

impl DemType {
    pub const ALL: [DemType; 11] = [
        Self::Srtmgl3,
        Self::Srtmgl1,
        Self::Srtmgl1E,
        Self::Aw3d30,
        Self::Srtm15Plus,
        Self::Nasadem,
        Self::Cop30,
        Self::EuDtm,
        Self::GediL3,
        Self::GebcoIceTopo,
        Self::GebcoSubIceTopo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Srtmgl3 => "SRTMGL3",
            Self::Srtmgl1 => "SRTMGL1",
            Self::Srtmgl1E => "SRTMGL1_E",
            Self::Aw3d30 => "AW3D30",
            Self::Srtm15Plus => "SRTM15Plus",
            Self::Nasadem => "NASADEM",
            Self::Cop30 => "COP30",
            Self::EuDtm => "EU_DTM",
            Self::GediL3 => "GEDI_L3",
            Self::GebcoIceTopo => "GEBCOIceTopo",
            Self::GebcoSubIceTopo => "GEBCOSubIceTopo",
        }
    }
}

impl fmt::Display for DemType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DemType {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self, GeoError> {
        Self::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| GeoError::UnknownDemType(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemQuerySpec {
    pub demtype: DemType,
    pub bbox: BBox,
}

impl DemQuerySpec {
    pub fn new(demtype: &str, bbox: BBox) -> Result<Self, GeoError> {
        Ok(Self {
            demtype: demtype.parse()?,
            bbox,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemRequest {
    pub url: String,
    pub params: Vec<(String, String)>,
}

impl DemRequest {
    pub fn param(&self, key: &str) -> Option<&str> {
        self.params
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn full_url(&self) -> String {
        let query = url::form_urlencoded::Serializer::new(String::new())
            .extend_pairs(&self.params)
            .finish();
        format!("{}?{}", self.url, query)
    }
}

/// Parameters for a GeoTIFF download; the key is a placeholder resolved at
/// execution time.
pub fn build_dem_request(spec: &DemQuerySpec) -> DemRequest {
    let key = Placeholder::new(DEM_ALIAS, "api_key").expect("valid placeholder");
    let b = &spec.bbox;
    let params = [
        ("demtype", spec.demtype.to_string()),
        ("south", b.south.to_string()),
        ("north", b.north.to_string()),
        ("west", b.west.to_string()),
        ("east", b.east.to_string()),
        ("outputFormat", "GTiff".to_string()),
        ("API_Key", key.token()),
    ];
    DemRequest {
        url: DEM_ENDPOINT.to_string(),
        params: params
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for d in DemType::ALL {
            assert_eq!(d.as_str().parse::<DemType>().unwrap(), d);
        }
    }

    #[test]
    fn request_params() {
        let bbox = BBox::new(17.9, -67.3, 18.5, -65.2).unwrap();
        let r = build_dem_request(&DemQuerySpec::new("SRTMGL1", bbox).unwrap());
        assert_eq!(r.param("demtype"), Some("SRTMGL1"));
        assert_eq!(r.param("south"), Some("17.9"));
        assert_eq!(r.param("north"), Some("18.5"));
        assert_eq!(r.param("west"), Some("-67.3"));
        assert_eq!(r.param("east"), Some("-65.2"));
        assert_eq!(r.param("API_Key"), Some("{{KEY:OpenTopography:api_key}}"));
    }

    #[test]
    fn unknown_type() {
        let bbox = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(
            DemQuerySpec::new("FOO", bbox),
            Err(GeoError::UnknownDemType("FOO".into()))
        );
    }
}
