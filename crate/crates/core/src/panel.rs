//! Station sets and year × day × site panels, with CSV ingestion and export.
//!
//! Stations CSV: `site_id,x_km,y_km`. Values CSV: `site_id,year,day_index,value`
//! with `day_index` running `1..=T`. Years are independent blocks; nothing in
//! the crate pairs observations across a year boundary.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::distance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub site_id: String,
    pub x_km: f64,
    pub y_km: f64,
}

impl Site {
    pub fn coords(&self) -> [f64; 2] {
        [self.x_km, self.y_km]
    }
}

/// Spatial sites plus the number of days observed per year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub sites: Vec<Site>,
    pub days: usize,
}

impl Layout {
    pub fn new(sites: Vec<Site>, days: usize) -> Result<Self> {
        let layout = Layout { sites, days };
        layout.validate()?;
        Ok(layout)
    }

    /// Unnamed sites `s1, s2, ...` at the given coordinates.
    pub fn from_coords(coords: &[[f64; 2]], days: usize) -> Result<Self> {
        Self::new(
            coords
                .iter()
                .enumerate()
                .map(|(i, c)| Site {
                    site_id: format!("s{}", i + 1),
                    x_km: c[0],
                    y_km: c[1],
                })
                .collect(),
            days,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites.is_empty() || self.days == 0 {
            return Err(Error::Layout("layout needs at least one site and one day".into()));
        }
        let mut seen = HashMap::new();
        for (i, s) in self.sites.iter().enumerate() {
            if !s.x_km.is_finite() || !s.y_km.is_finite() {
                return Err(Error::Layout(format!("site {} has non-finite coordinates", s.site_id)));
            }
            if let Some(j) = seen.insert(s.site_id.as_str(), i) {
                return Err(Error::Layout(format!(
                    "duplicated site_id {} (rows {j} and {i})",
                    s.site_id
                )));
            }
        }
        Ok(())
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn coords(&self) -> Vec<[f64; 2]> {
        self.sites.iter().map(Site::coords).collect()
    }

    pub fn times(&self) -> Vec<i64> {
        (0..self.days as i64).collect()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        distance(self.sites[i].coords(), self.sites[j].coords())
    }

    /// Largest inter-site distance.
    pub fn diameter(&self) -> f64 {
        let n = self.n_sites();
        let mut d: f64 = 0.0;
        for i in 0..n {
            for j in 0..i {
                d = d.max(self.distance(i, j));
            }
        }
        d
    }

    /// Same sites and day count (coordinates compared exactly).
    pub fn same_shape(&self, other: &Layout) -> bool {
        self.days == other.days
            && self.sites.len() == other.sites.len()
            && self
                .sites
                .iter()
                .zip(&other.sites)
                .all(|(a, b)| a.coords() == b.coords())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Data,
    Uniform,
}

/// `N` years × `T` days × `n` sites, stored year-major then day then site.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    pub layout: Layout,
    /// Year labels, one per block (sorted on ingestion).
    pub year_labels: Vec<i64>,
    values: Vec<f64>,
    present: Vec<bool>,
    pub scale: Scale,
}

impl PanelDataset {
    pub fn new(layout: Layout, year_labels: Vec<i64>, values: Vec<f64>, scale: Scale) -> Result<Self> {
        let present = values.iter().map(|v| !v.is_nan()).collect();
        Self::with_mask(layout, year_labels, values, present, scale)
    }

    pub fn with_mask(
        layout: Layout,
        year_labels: Vec<i64>,
        values: Vec<f64>,
        present: Vec<bool>,
        scale: Scale,
    ) -> Result<Self> {
        layout.validate()?;
        let expected = year_labels.len() * layout.days * layout.n_sites();
        if values.len() != expected || present.len() != expected {
            return Err(Error::Shape(format!(
                "panel expects {expected} values, got {} values and {} mask entries",
                values.len(),
                present.len()
            )));
        }
        if year_labels.is_empty() {
            return Err(Error::Layout("panel needs at least one year".into()));
        }
        for (v, &p) in values.iter().zip(&present) {
            if p && !v.is_finite() {
                return Err(Error::Domain(format!("non-finite observation {v}")));
            }
            if p && scale == Scale::Uniform && !(0.0..=1.0).contains(v) {
                return Err(Error::Domain(format!("uniform-scale value {v} outside [0,1]")));
            }
        }
        Ok(PanelDataset {
            layout,
            year_labels,
            values,
            present,
            scale,
        })
    }

    pub fn n_years(&self) -> usize {
        self.year_labels.len()
    }

    pub fn n_days(&self) -> usize {
        self.layout.days
    }

    pub fn n_sites(&self) -> usize {
        self.layout.n_sites()
    }

    #[inline]
    pub fn index(&self, year: usize, day: usize, site: usize) -> usize {
        (year * self.layout.days + day) * self.layout.n_sites() + site
    }

    #[inline]
    pub fn get(&self, year: usize, day: usize, site: usize) -> Option<f64> {
        let k = self.index(year, day, site);
        self.present[k].then(|| self.values[k])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.present
    }

    pub fn is_complete(&self) -> bool {
        self.present.iter().all(|&p| p)
    }

    /// Present observations at one site, pooled over all years.
    pub fn site_values(&self, site: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_years() * self.n_days());
        for y in 0..self.n_years() {
            for d in 0..self.n_days() {
                if let Some(v) = self.get(y, d, site) {
                    out.push(v);
                }
            }
        }
        out
    }

    /// Panel restricted to a subset of years, in the given order.
    pub fn select_years(&self, years: &[usize]) -> Result<PanelDataset> {
        let block = self.n_days() * self.n_sites();
        let mut values = Vec::with_capacity(years.len() * block);
        let mut present = Vec::with_capacity(years.len() * block);
        let mut labels = Vec::with_capacity(years.len());
        for &y in years {
            if y >= self.n_years() {
                return Err(Error::Shape(format!("year index {y} out of range")));
            }
            values.extend_from_slice(&self.values[y * block..(y + 1) * block]);
            present.extend_from_slice(&self.present[y * block..(y + 1) * block]);
            labels.push(self.year_labels[y]);
        }
        PanelDataset::with_mask(self.layout.clone(), labels, values, present, self.scale)
    }

    /// Panel with sites reordered: new site `k` is old site `order[k]`.
    pub fn permute_sites(&self, order: &[usize]) -> Result<PanelDataset> {
        let n = self.n_sites();
        if order.len() != n {
            return Err(Error::Shape("permutation length differs from site count".into()));
        }
        let sites = order.iter().map(|&i| self.layout.sites[i].clone()).collect();
        let layout = Layout::new(sites, self.n_days())?;
        let mut values = vec![0.0; self.values.len()];
        let mut present = vec![false; self.present.len()];
        for y in 0..self.n_years() {
            for d in 0..self.n_days() {
                for (k, &old) in order.iter().enumerate() {
                    let src = self.index(y, d, old);
                    let dst = self.index(y, d, k);
                    values[dst] = self.values[src];
                    present[dst] = self.present[src];
                }
            }
        }
        PanelDataset::with_mask(layout, self.year_labels.clone(), values, present, self.scale)
    }

    /// Applies a per-site map to every present value.
    pub fn map_values(&self, scale: Scale, mut f: impl FnMut(usize, f64) -> Result<f64>) -> Result<PanelDataset> {
        let n = self.n_sites();
        let mut values = self.values.clone();
        for (k, v) in values.iter_mut().enumerate() {
            if self.present[k] {
                *v = f(k % n, *v)?;
            }
        }
        PanelDataset::with_mask(self.layout.clone(), self.year_labels.clone(), values, self.present.clone(), scale)
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct ValueRecord {
    site_id: String,
    year: i64,
    day_index: usize,
    value: f64,
}

pub fn read_stations<R: Read>(reader: R) -> Result<Vec<Site>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut sites = Vec::new();
    for (row, rec) in rdr.deserialize::<Site>().enumerate() {
        let site = rec.map_err(|e| Error::Ingest(format!("stations row {}: {e}", row + 1)))?;
        sites.push(site);
    }
    Ok(sites)
}

/// Builds a dense panel from station and value tables; absent records are masked.
pub fn ingest<R1: Read, R2: Read>(stations: R1, values: R2, scale: Scale) -> Result<PanelDataset> {
    let sites = read_stations(stations)?;
    let index: HashMap<String, usize> = sites
        .iter()
        .enumerate()
        .map(|(i, s)| (s.site_id.clone(), i))
        .collect();
    if index.len() != sites.len() {
        return Err(Error::Ingest("duplicated site_id in stations table".into()));
    }

    let mut rdr = csv::Reader::from_reader(values);
    let mut records: BTreeMap<(i64, usize, usize), f64> = BTreeMap::new();
    let mut max_day: BTreeMap<i64, usize> = BTreeMap::new();
    for (row, rec) in rdr.deserialize::<ValueRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::Ingest(format!("values row {}: {e}", row + 1)))?;
        let &site = index
            .get(&rec.site_id)
            .ok_or_else(|| Error::Ingest(format!("values row {}: unknown site_id {}", row + 1, rec.site_id)))?;
        if rec.day_index == 0 {
            return Err(Error::Ingest(format!("values row {}: day_index starts at 1", row + 1)));
        }
        if records.insert((rec.year, rec.day_index, site), rec.value).is_some() {
            return Err(Error::Ingest(format!(
                "duplicate record for site {}, year {}, day {}",
                rec.site_id, rec.year, rec.day_index
            )));
        }
        let m = max_day.entry(rec.year).or_insert(0);
        *m = (*m).max(rec.day_index);
    }
    if records.is_empty() {
        return Err(Error::Ingest("values table is empty".into()));
    }
    let days = *max_day.values().next().unwrap();
    if let Some((year, d)) = max_day.iter().find(|(_, &d)| d != days) {
        return Err(Error::Ingest(format!(
            "inconsistent days per year: year {year} ends at day {d}, expected {days}"
        )));
    }
    let year_labels: Vec<i64> = max_day.keys().copied().collect();
    let year_pos: HashMap<i64, usize> = year_labels.iter().enumerate().map(|(i, &y)| (y, i)).collect();
    let layout = Layout::new(sites, days)?;
    let n = layout.n_sites();
    let total = year_labels.len() * days * n;
    let mut vals = vec![f64::NAN; total];
    let mut present = vec![false; total];
    for ((year, day, site), v) in records {
        let k = (year_pos[&year] * days + (day - 1)) * n + site;
        vals[k] = v;
        present[k] = true;
    }
    PanelDataset::with_mask(layout, year_labels, vals, present, scale)
}

pub fn ingest_files(stations: &Path, values: &Path, scale: Scale) -> Result<PanelDataset> {
    ingest(std::fs::File::open(stations)?, std::fs::File::open(values)?, scale)
}

pub fn write_stations<W: Write>(layout: &Layout, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in &layout.sites {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes present values in long format (site, year, day) order.
pub fn write_values<W: Write>(panel: &PanelDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (s, site) in panel.layout.sites.iter().enumerate() {
        for y in 0..panel.n_years() {
            for d in 0..panel.n_days() {
                if let Some(value) = panel.get(y, d, s) {
                    w.serialize(ValueRecord {
                        site_id: site.site_id.clone(),
                        year: panel.year_labels[y],
                        day_index: d + 1,
                        value,
                    })?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn export_files(panel: &PanelDataset, stations: &Path, values: &Path) -> Result<()> {
    write_stations(&panel.layout, std::fs::File::create(stations)?)?;
    write_values(panel, std::fs::File::create(values)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const STATIONS: &str = "site_id,x_km,y_km\nA,0,0\nB,3.5,4\n";

    #[test]
    fn single_site_three_days() {
        let values = "site_id,year,day_index,value\nA,2000,1,0.5\nA,2000,2,1.5\nA,2000,3,2.5\n";
        let p = ingest("site_id,x_km,y_km\nA,0,0\n".as_bytes(), values.as_bytes(), Scale::Data).unwrap();
        assert_eq!((p.n_years(), p.n_days(), p.n_sites()), (1, 3, 1));
        assert_eq!(p.get(0, 2, 0), Some(2.5));
        assert!(p.is_complete());
    }

    #[test]
    fn duplicate_record_is_named() {
        let values = "site_id,year,day_index,value\nA,2001,2,1\nA,2001,2,3\n";
        let err = ingest(STATIONS.as_bytes(), values.as_bytes(), Scale::Data).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("site A") && msg.contains("year 2001") && msg.contains("day 2"), "{msg}");
    }

    #[test]
    fn ingestion_errors() {
        let unknown = "site_id,year,day_index,value\nZ,2001,1,1\n";
        assert!(ingest(STATIONS.as_bytes(), unknown.as_bytes(), Scale::Data).is_err());
        let nonnumeric = "site_id,year,day_index,value\nA,2001,1,wet\n";
        assert!(ingest(STATIONS.as_bytes(), nonnumeric.as_bytes(), Scale::Data).is_err());
        let ragged = "site_id,year,day_index,value\nA,2001,1,1\nA,2001,2,1\nA,2002,1,1\n";
        let err = ingest(STATIONS.as_bytes(), ragged.as_bytes(), Scale::Data).unwrap_err();
        assert!(err.to_string().contains("inconsistent"));
        let dup_station = "site_id,x_km,y_km\nA,0,0\nA,1,1\n";
        assert!(ingest(dup_station.as_bytes(), "site_id,year,day_index,value\nA,1,1,1\n".as_bytes(), Scale::Data).is_err());
    }

    #[test]
    fn export_then_ingest_reproduces_cube_and_mask() {
        let values = "site_id,year,day_index,value\nA,2001,1,0.1\nA,2001,2,0.30000000000000004\nB,2001,2,7e-12\nA,2003,1,1e300\nB,2003,2,-2.5\n";
        let p = ingest(STATIONS.as_bytes(), values.as_bytes(), Scale::Data).unwrap();
        assert!(!p.is_complete());
        let mut st = Vec::new();
        let mut vals = Vec::new();
        write_stations(&p.layout, &mut st).unwrap();
        write_values(&p, &mut vals).unwrap();
        let q = ingest(st.as_slice(), vals.as_slice(), Scale::Data).unwrap();
        assert_eq!(p.mask(), q.mask());
        assert_eq!(p.year_labels, q.year_labels);
        for (a, b) in p.values().iter().zip(q.values()) {
            assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
    }

    #[test]
    fn site_permutation_round_trip() {
        let values = "site_id,year,day_index,value\nA,1,1,1\nB,1,1,2\nA,1,2,3\nB,1,2,4\n";
        let p = ingest(STATIONS.as_bytes(), values.as_bytes(), Scale::Data).unwrap();
        let q = p.permute_sites(&[1, 0]).unwrap();
        assert_eq!(q.get(0, 1, 0), Some(4.0));
        assert_eq!(q.permute_sites(&[1, 0]).unwrap(), p);
    }
}
