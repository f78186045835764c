use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Region, RegionDataset, ETHNICITIES, FEATURES, PARTIES};
use crate::error::{Error, Result};

pub const RECORD_HEADER: [&str; 7] = ["region_id", "district_id", "age", "gender", "party", "ethnicity", "prior_vote"];

struct Row {
    region: String,
    district: String,
    age: f64,
    female: f64,
    party: usize,
    ethnicity: usize,
    prior: f64,
}

fn level(value: &str, levels: &[&str], what: &str, line: u64) -> Result<usize> {
    levels.iter().position(|l| l.eq_ignore_ascii_case(value)).ok_or_else(|| {
        Error::Input(format!("line {line}: unknown {what} '{value}' (expected one of {})", levels.join(", ")))
    })
}

/// Reads a records CSV from `path`. See [`ingest_reader`].
pub fn ingest(path: &Path) -> Result<RegionDataset> {
    let f = std::fs::File::open(path).map_err(|source| Error::File { path: path.to_owned(), source })?;
    ingest_reader(std::io::BufReader::new(f))
}

/// Parses records, drops rows with an empty field, normalizes age to
/// `[0, 1]` over the remaining rows and aggregates per region.
///
/// Unknown categorical levels are errors. Regions left without records are
/// dropped with a warning.
pub fn ingest_reader<R: Read>(reader: R) -> Result<RegionDataset> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != RECORD_HEADER {
        return Err(Error::Input(format!(
            "records header must be '{}', got '{}'",
            RECORD_HEADER.join(","),
            header.join(",")
        )));
    }

    let mut rows = Vec::new();
    let mut excluded = 0usize;
    let mut seen_regions: BTreeMap<String, String> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() > RECORD_HEADER.len() {
            return Err(Error::Input(format!("line {line}: {} fields, expected 7", rec.len())));
        }
        let field = |k: usize| rec.get(k).unwrap_or("");
        let region = field(0);
        if !region.is_empty() {
            seen_regions.entry(region.to_owned()).or_default();
        }
        if (0..RECORD_HEADER.len()).any(|k| field(k).is_empty()) {
            excluded += 1;
            continue;
        }
        let age: f64 = field(2)
            .parse()
            .ok()
            .filter(|a: &f64| a.is_finite())
            .ok_or_else(|| Error::Input(format!("line {line}: age '{}' is not a number", field(2))))?;
        let female = match field(3).to_ascii_uppercase().as_str() {
            "M" | "MALE" => 0.0,
            "F" | "FEMALE" => 1.0,
            other => return Err(Error::Input(format!("line {line}: unknown gender '{other}' (expected M, F)"))),
        };
        let prior = match field(6) {
            "0" => 0.0,
            "1" => 1.0,
            other => return Err(Error::Input(format!("line {line}: prior_vote '{other}' must be 0 or 1"))),
        };
        rows.push(Row {
            region: region.to_owned(),
            district: field(1).to_owned(),
            age,
            female,
            party: level(field(4), &PARTIES, "party", line)?,
            ethnicity: level(field(5), &ETHNICITIES, "ethnicity", line)?,
            prior,
        });
    }

    let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.age), hi.max(r.age)));
    let span = hi - lo;
    let norm_age = |a: f64| if span > 0.0 { (a - lo) / span } else { 0.0 };

    let (np, ne, nf) = (PARTIES.len(), ETHNICITIES.len(), FEATURES.len());
    let mut party_sum = Array2::<f64>::zeros((np, nf));
    let mut eth_sum = Array2::<f64>::zeros((ne, nf));
    let mut party_n = vec![0usize; np];
    let mut eth_n = vec![0usize; ne];
    let mut counts: BTreeMap<&str, (String, Array2<u64>)> = BTreeMap::new();
    for r in &rows {
        let f = [norm_age(r.age), r.female, r.prior];
        for (k, v) in f.iter().enumerate() {
            party_sum[[r.party, k]] += v;
            eth_sum[[r.ethnicity, k]] += v;
        }
        party_n[r.party] += 1;
        eth_n[r.ethnicity] += 1;
        let entry = counts.entry(&r.region).or_insert_with(|| (r.district.clone(), Array2::zeros((np, ne))));
        entry.1[[r.party, r.ethnicity]] += 1;
    }
    for (i, &n) in party_n.iter().enumerate() {
        if n == 0 {
            log::warn!("no records for party {}; its profile is zero", PARTIES[i]);
        } else {
            party_sum.row_mut(i).mapv_inplace(|v| v / n as f64);
        }
    }
    for (j, &n) in eth_n.iter().enumerate() {
        if n == 0 {
            log::warn!("no records for ethnicity {}; its profile is zero", ETHNICITIES[j]);
        } else {
            eth_sum.row_mut(j).mapv_inplace(|v| v / n as f64);
        }
    }
    for id in seen_regions.keys() {
        if !counts.contains_key(id.as_str()) {
            log::warn!("region {id} has no complete records and is excluded");
        }
    }

    let regions = counts
        .into_iter()
        .map(|(id, (district, n))| {
            let total = n.sum() as f64;
            let joint = n.mapv(|x| x as f64 / total);
            let r = Array1::from_iter(n.rows().into_iter().map(|row| row.sum() as f64 / total));
            let c = Array1::from_iter(n.columns().into_iter().map(|col| col.sum() as f64 / total));
            Region { id: id.to_owned(), district, r, c, ground_truth: Some(joint), records: total as usize }
        })
        .collect();
    Ok(RegionDataset { regions, party_profiles: party_sum, ethnicity_profiles: eth_sum, excluded_rows: excluded })
}
