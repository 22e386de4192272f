//! Cumulative COVID-19 case/death tables, state or county level.

use std::path::Path;

use chrono::NaiveDate;

use super::{status_error, GeoError};
use crate::http::{HttpRequest, HttpTransport};

pub const COVID_BASE_URL: &str = "https://raw.githubusercontent.com/nytimes/covid-19-data/master";

pub fn first_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 21).unwrap()
}

pub fn last_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2023, 3, 23).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovidLevel {
    State,
    County,
}

impl CovidLevel {
    pub fn file_name(self) -> &'static str {
        match self {
            Self::State => "us-states.csv",
            Self::County => "us-counties.csv",
        }
    }
}

/// Optional row filter, matched case-sensitively on the `state` and
/// `county` columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Region {
    State(String),
    County { state: String, county: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CovidQuerySpec {
    level: CovidLevel,
    start: NaiveDate,
    end: NaiveDate,
    region: Option<Region>,
}

impl CovidQuerySpec {
    pub fn new(
        level: CovidLevel,
        start: NaiveDate,
        end: NaiveDate,
        region: Option<Region>,
    ) -> Result<Self, GeoError> {
        for d in [start, end] {
            if d < first_date() || d > last_date() {
                return Err(GeoError::RangeError(format!(
                    "{d} is outside {}..{}",
                    first_date(),
                    last_date()
                )));
            }
        }
        if start > end {
            return Err(GeoError::EmptyRange);
        }
        if matches!(region, Some(Region::County { .. })) && level == CovidLevel::State {
            return Err(GeoError::EmptyInput("county filter on a state-level table"));
        }
        Ok(Self {
            level,
            start,
            end,
            region,
        })
    }

    pub fn level(&self) -> CovidLevel {
        self.level
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn end(&self) -> NaiveDate {
        self.end
    }

    pub fn region(&self) -> Option<&Region> {
        self.region.as_ref()
    }

    pub fn url(&self, base: &str) -> String {
        format!("{}/{}", base.trim_end_matches('/'), self.level.file_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CovidTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CovidTable {
    pub fn write_csv(&self, path: &Path) -> Result<(), GeoError> {
        let err = |e: csv::Error| GeoError::MalformedCsv(e.to_string());
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        w.write_record(&self.header).map_err(err)?;
        for r in &self.rows {
            w.write_record(r).map_err(err)?;
        }
        w.flush().map_err(|e| GeoError::MalformedCsv(e.to_string()))
    }
}

fn column(header: &[String], name: &str) -> Result<usize, GeoError> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| GeoError::MalformedCsv(format!("missing column {name:?}")))
}

/// Filters an upstream CSV body. Column order and header are preserved.
pub fn filter_covid_csv(spec: &CovidQuerySpec, body: &[u8]) -> Result<CovidTable, GeoError> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(body);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| GeoError::MalformedCsv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let date_col = column(&header, "date")?;
    let state_col = column(&header, "state")?;
    let county_col = match spec.level {
        CovidLevel::County => Some(column(&header, "county")?),
        CovidLevel::State => None,
    };
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| GeoError::MalformedCsv(e.to_string()))?;
        let date = NaiveDate::parse_from_str(&rec[date_col], "%Y-%m-%d")
            .map_err(|_| GeoError::MalformedCsv(format!("bad date {:?}", &rec[date_col])))?;
        if date < spec.start || date > spec.end {
            continue;
        }
        let keep = match &spec.region {
            None => true,
            Some(Region::State(s)) => &rec[state_col] == s,
            Some(Region::County { state, county }) => {
                &rec[state_col] == state && county_col.is_some_and(|c| &rec[c] == county)
            }
        };
        if keep {
            rows.push(rec.iter().map(str::to_string).collect());
        }
    }
    Ok(CovidTable { header, rows })
}

pub fn fetch_covid(
    spec: &CovidQuerySpec,
    base_url: &str,
    http: &dyn HttpTransport,
) -> Result<CovidTable, GeoError> {
    let resp = http.send(&HttpRequest::get(spec.url(base_url)))?;
    if resp.status != 200 {
        return Err(status_error(resp.status, &resp.body));
    }
    filter_covid_csv(spec, &resp.body)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    const BODY: &str = "date,state,fips,cases,deaths\n\
        2021-09-30,Ohio,39,10,1\n\
        2021-10-01,Ohio,39,11,1\n\
        2021-10-01,Utah,49,5,0\n\
        2022-03-01,Ohio,39,20,2\n";

    #[test]
    fn endpoints_are_inclusive() {
        assert!(CovidQuerySpec::new(CovidLevel::State, first_date(), last_date(), None).is_ok());
        assert!(matches!(
            CovidQuerySpec::new(CovidLevel::State, d(2019, 12, 1), d(2020, 2, 1), None),
            Err(GeoError::RangeError(_))
        ));
        assert!(matches!(
            CovidQuerySpec::new(CovidLevel::State, d(2021, 1, 1), d(2023, 3, 24), None),
            Err(GeoError::RangeError(_))
        ));
    }

    #[test]
    fn filters_by_date_and_state() {
        let spec = CovidQuerySpec::new(
            CovidLevel::State,
            d(2021, 10, 1),
            d(2022, 2, 28),
            Some(Region::State("Ohio".into())),
        )
        .unwrap();
        let t = filter_covid_csv(&spec, BODY.as_bytes()).unwrap();
        assert_eq!(t.header, ["date", "state", "fips", "cases", "deaths"]);
        assert_eq!(t.rows, vec![vec!["2021-10-01", "Ohio", "39", "11", "1"]]);
    }

    #[test]
    fn truncated_row() {
        let spec = CovidQuerySpec::new(CovidLevel::State, first_date(), last_date(), None).unwrap();
        let cut = "date,state,fips,cases,deaths\n2021-10-01,Ohio,39,11,1\n2021-10-02,Oh";
        assert!(matches!(
            filter_covid_csv(&spec, cut.as_bytes()),
            Err(GeoError::MalformedCsv(_))
        ));
    }
}
