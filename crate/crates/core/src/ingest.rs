//! Survey ingestion: CSV loading, regrouping of raw labels, and the
//! treatment-by-fuel abundance table.
//!
//! Treatments are unique (ethnicity, income, education, geo) level tuples and
//! are ordered lexicographically by the level indices declared in the
//! [`RegroupConfig`]. Counts are households.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::Factor;
use crate::scalar::Scalar;

/// The four design factors, in canonical order.
pub const FACTOR_NAMES: [&str; 4] = ["ethnicity", "income", "education", "geo"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Ethnicity,
    Income,
    Education,
    Geo,
    Fuel,
}

impl Field {
    pub const ALL: [Field; 5] = [
        Field::Ethnicity,
        Field::Income,
        Field::Education,
        Field::Geo,
        Field::Fuel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::Ethnicity => "ethnicity",
            Field::Income => "income",
            Field::Education => "education",
            Field::Geo => "geo",
            Field::Fuel => "fuel",
        }
    }

    /// Position among the design factors; `None` for the fuel response.
    pub fn factor_index(self) -> Option<usize> {
        match self {
            Field::Ethnicity => Some(0),
            Field::Income => Some(1),
            Field::Education => Some(2),
            Field::Geo => Some(3),
            Field::Fuel => None,
        }
    }

    pub fn parse(s: &str) -> Option<Field> {
        Field::ALL.into_iter().find(|f| f.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Columns {
    #[serde(default = "default_id_column")]
    pub household_id: String,
    #[serde(default = "default_ethnicity_column")]
    pub ethnicity: String,
    #[serde(default = "default_income_column")]
    pub income: String,
    #[serde(default = "default_education_column")]
    pub education: String,
    #[serde(default = "default_geo_column")]
    pub geo: String,
    #[serde(default = "default_fuel_column")]
    pub fuel: String,
}

fn default_id_column() -> String {
    "household_id".into()
}
fn default_ethnicity_column() -> String {
    "caste_household".into()
}
fn default_income_column() -> String {
    "income_level_household".into()
}
fn default_education_column() -> String {
    "education_level_household_head".into()
}
fn default_geo_column() -> String {
    "vdcmun_id".into()
}
fn default_fuel_column() -> String {
    "source_cooking_fuel_post_eq".into()
}

impl Default for Columns {
    fn default() -> Self {
        Self {
            household_id: default_id_column(),
            ethnicity: default_ethnicity_column(),
            income: default_income_column(),
            education: default_education_column(),
            geo: default_geo_column(),
            fuel: default_fuel_column(),
        }
    }
}

impl Columns {
    pub fn get(&self, field: Field) -> &str {
        match field {
            Field::Ethnicity => &self.ethnicity,
            Field::Income => &self.income,
            Field::Education => &self.education,
            Field::Geo => &self.geo,
            Field::Fuel => &self.fuel,
        }
    }
}

/// Ordered target level lists. Their order defines level indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Levels {
    pub ethnicity: Vec<String>,
    pub income: Vec<String>,
    pub education: Vec<String>,
    pub geo: Vec<String>,
    pub fuel: Vec<String>,
}

impl Levels {
    pub fn get(&self, field: Field) -> &[String] {
        match field {
            Field::Ethnicity => &self.ethnicity,
            Field::Income => &self.income,
            Field::Education => &self.education,
            Field::Geo => &self.geo,
            Field::Fuel => &self.fuel,
        }
    }

    pub fn factors(&self) -> [&[String]; 4] {
        [&self.ethnicity, &self.income, &self.education, &self.geo]
    }
}

/// Raw-label regrouping rules, loaded from a TOML file.
///
/// `income_map` and `fuel_map` are optional; without them the raw value must
/// already be one of the declared levels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegroupConfig {
    #[serde(default)]
    pub columns: Columns,
    pub levels: Levels,
    #[serde(default)]
    pub ethnicity_map: BTreeMap<String, String>,
    #[serde(default)]
    pub education_map: BTreeMap<String, String>,
    #[serde(default)]
    pub geo_map: BTreeMap<String, String>,
    #[serde(default)]
    pub income_map: Option<BTreeMap<String, String>>,
    #[serde(default)]
    pub fuel_map: Option<BTreeMap<String, String>>,
    /// Cell values treated as missing (compared after trimming).
    #[serde(default = "default_missing_tokens")]
    pub missing_tokens: Vec<String>,
}

fn default_missing_tokens() -> Vec<String> {
    vec![String::new(), "NA".into()]
}

impl RegroupConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RegroupConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("regroup config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        for field in Field::ALL {
            let levels = self.levels.get(field);
            if levels.is_empty() {
                return Err(Error::Config(format!("no levels declared for `{}`", field.name())));
            }
            let unique: BTreeSet<&String> = levels.iter().collect();
            if unique.len() != levels.len() {
                return Err(Error::Config(format!(
                    "duplicate levels declared for `{}`",
                    field.name()
                )));
            }
            if let Some(map) = self.map(field) {
                let bad: Vec<String> = map
                    .iter()
                    .filter(|(_, target)| !levels.contains(target))
                    .map(|(raw, target)| format!("{raw} -> {target}"))
                    .collect();
                if !bad.is_empty() {
                    return Err(Error::Config(format!(
                        "`{}_map` targets undeclared levels: {}",
                        field.name(),
                        bad.join(", ")
                    )));
                }
            }
        }
        Ok(())
    }

    /// The raw-to-level map for `field`, if one is declared.
    pub fn map(&self, field: Field) -> Option<&BTreeMap<String, String>> {
        match field {
            Field::Ethnicity => Some(&self.ethnicity_map),
            Field::Education => Some(&self.education_map),
            Field::Geo => Some(&self.geo_map),
            Field::Income => self.income_map.as_ref(),
            Field::Fuel => self.fuel_map.as_ref(),
        }
    }

    /// Maps a raw label to a level index.
    pub fn resolve(&self, field: Field, raw: &str) -> Option<usize> {
        let levels = self.levels.get(field);
        let target = match self.map(field) {
            Some(map) => map.get(raw).map(String::as_str),
            None => Some(raw),
        }?;
        levels.iter().position(|l| l == target)
    }

    fn is_missing(&self, value: &str) -> bool {
        self.missing_tokens.iter().any(|t| t == value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Household {
    pub household_id: String,
    pub ethnicity: usize,
    pub income: usize,
    pub education: usize,
    pub geo: usize,
    pub fuel: usize,
}

impl Household {
    pub fn treatment(&self) -> [usize; 4] {
        [self.ethnicity, self.income, self.education, self.geo]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub input_rows: usize,
    pub retained: usize,
    pub dropped: usize,
    /// Rows missing each field (a row can count toward several fields).
    pub missing_by_field: BTreeMap<String, usize>,
    /// Demographic rows without a matching resources row (included in `dropped`).
    pub unmatched_keys: usize,
    /// Resources rows without a matching demographic row (not counted as input).
    pub orphan_resources: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HouseholdTable {
    pub levels: Levels,
    pub rows: Vec<Household>,
    pub report: LoadReport,
}

impl HouseholdTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

struct CsvTable {
    headers: Vec<String>,
    records: Vec<(u64, csv::StringRecord)>,
}

impl CsvTable {
    fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }
}

fn read_csv_table(path: &Path) -> Result<CsvTable> {
    let mut raw = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    let file = path.display().to_string();
    if raw.trim().is_empty() {
        return Ok(CsvTable {
            headers: Vec::new(),
            records: Vec::new(),
        });
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(raw.as_bytes());
    let malformed = |e: csv::Error, file: &str| {
        let line = e.position().map(|p| p.line()).unwrap_or(0);
        Error::MalformedCsv {
            file: file.to_string(),
            line,
            message: e.to_string(),
        }
    };
    let headers = reader
        .headers()
        .map_err(|e| malformed(e, &file))?
        .iter()
        .map(|h| h.trim_start_matches('\u{feff}').to_string())
        .collect();
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| malformed(e, &file))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        records.push((line, rec));
    }
    Ok(CsvTable { headers, records })
}

/// Loads and joins the demographic and resources tables.
///
/// Design factors are read from the demographics file when it has the
/// configured column, otherwise from the resources file; the fuel column is
/// looked up the other way round. Rows with any missing field are dropped and
/// tallied in the [`LoadReport`].
pub fn load_households(
    demographics_path: impl AsRef<Path>,
    resources_path: impl AsRef<Path>,
    config: &RegroupConfig,
) -> Result<HouseholdTable> {
    let demo = read_csv_table(demographics_path.as_ref())?;
    let res = read_csv_table(resources_path.as_ref())?;
    let demo_name = demographics_path.as_ref().display().to_string();
    let res_name = resources_path.as_ref().display().to_string();
    join_households(&demo, &demo_name, &res, &res_name, config)
}

#[derive(Clone, Copy)]
enum Source {
    Demographics(usize),
    Resources(usize),
}

fn join_households(
    demo: &CsvTable,
    demo_name: &str,
    res: &CsvTable,
    res_name: &str,
    config: &RegroupConfig,
) -> Result<HouseholdTable> {
    let cols = &config.columns;
    let mut report = LoadReport {
        input_rows: demo.records.len(),
        ..LoadReport::default()
    };
    for field in Field::ALL {
        report.missing_by_field.insert(field.name().to_string(), 0);
    }
    if demo.records.is_empty() {
        report.orphan_resources = res.records.len();
        return Ok(HouseholdTable {
            levels: config.levels.clone(),
            rows: Vec::new(),
            report,
        });
    }

    let id_col = |t: &CsvTable, name: &str| {
        t.column(&cols.household_id).ok_or_else(|| {
            Error::Config(format!("{name}: missing key column `{}`", cols.household_id))
        })
    };
    let demo_id = id_col(demo, demo_name)?;
    let res_id = if res.records.is_empty() && res.headers.is_empty() {
        None
    } else {
        Some(id_col(res, res_name)?)
    };

    let mut sources = Vec::with_capacity(5);
    for field in Field::ALL {
        let name = cols.get(field);
        let (first, second) = if field == Field::Fuel {
            (res.column(name).map(Source::Resources), demo.column(name).map(Source::Demographics))
        } else {
            (demo.column(name).map(Source::Demographics), res.column(name).map(Source::Resources))
        };
        match first.or(second) {
            Some(src) => sources.push(src),
            None if res_id.is_none() && field == Field::Fuel => {
                sources.push(Source::Resources(usize::MAX))
            }
            None => {
                return Err(Error::Config(format!(
                    "column `{name}` for {} not found in either input",
                    field.name()
                )))
            }
        }
    }

    let mut resources: HashMap<&str, &csv::StringRecord> = HashMap::with_capacity(res.records.len());
    if let Some(rid) = res_id {
        for (_, rec) in &res.records {
            let key = rec.get(rid).unwrap_or("");
            if config.is_missing(key) {
                continue;
            }
            if resources.insert(key, rec).is_some() {
                return Err(Error::KeyCollision {
                    file: res_name.to_string(),
                    key: key.to_string(),
                });
            }
        }
    }

    let mut seen: HashMap<&str, ()> = HashMap::with_capacity(demo.records.len());
    let mut unmapped: BTreeSet<(Field, String)> = BTreeSet::new();
    let mut rows = Vec::with_capacity(demo.records.len());
    let mut matched = 0usize;

    for (_, rec) in &demo.records {
        let key = rec.get(demo_id).unwrap_or("");
        let key_missing = config.is_missing(key);
        if !key_missing && seen.insert(key, ()).is_some() {
            return Err(Error::KeyCollision {
                file: demo_name.to_string(),
                key: key.to_string(),
            });
        }
        let partner = if key_missing { None } else { resources.get(key).copied() };
        if partner.is_some() {
            matched += 1;
        } else if !key_missing {
            report.unmatched_keys += 1;
        }

        let mut values: [Option<usize>; 5] = [None; 5];
        let mut complete = !key_missing;
        for (slot, (field, src)) in Field::ALL.iter().zip(&sources).enumerate() {
            let raw = match *src {
                Source::Demographics(c) => rec.get(c),
                Source::Resources(c) => partner.and_then(|p| p.get(c)),
            };
            match raw {
                Some(v) if !config.is_missing(v) => match config.resolve(*field, v) {
                    Some(level) => values[slot] = Some(level),
                    None => {
                        unmapped.insert((*field, v.to_string()));
                        complete = false;
                    }
                },
                _ => {
                    *report.missing_by_field.get_mut(field.name()).expect("field key") += 1;
                    complete = false;
                }
            }
        }
        if complete {
            rows.push(Household {
                household_id: key.to_string(),
                ethnicity: values[0].expect("complete"),
                income: values[1].expect("complete"),
                education: values[2].expect("complete"),
                geo: values[3].expect("complete"),
                fuel: values[4].expect("complete"),
            });
        }
    }

    if !unmapped.is_empty() {
        return Err(Error::UnmappedLabels {
            labels: unmapped
                .into_iter()
                .map(|(f, l)| format!("{}: {l:?}", f.name()))
                .collect(),
        });
    }

    report.retained = rows.len();
    report.dropped = report.input_rows - report.retained;
    report.orphan_resources = resources.len() - matched;
    Ok(HouseholdTable {
        levels: config.levels.clone(),
        rows,
        report,
    })
}

/// Treatment-by-fuel household counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbundanceTable {
    pub factor_names: Vec<String>,
    /// Declared levels for each design factor, in `factor_names` order.
    pub factor_levels: Vec<Vec<String>>,
    pub fuels: Vec<String>,
    /// Level indices per treatment, one entry per design factor.
    pub treatments: Vec<[usize; 4]>,
    pub counts: Vec<Vec<u64>>,
}

/// Counts households per nonempty factor combination.
pub fn build_abundance_table(h: &HouseholdTable) -> Result<AbundanceTable> {
    if h.is_empty() {
        return Err(Error::InvalidInput(
            "cannot build an abundance table from zero households".into(),
        ));
    }
    let n_fuels = h.levels.fuel.len();
    let mut cells: BTreeMap<[usize; 4], Vec<u64>> = BTreeMap::new();
    for row in &h.rows {
        cells.entry(row.treatment()).or_insert_with(|| vec![0; n_fuels])[row.fuel] += 1;
    }
    let (treatments, counts) = cells.into_iter().unzip();
    Ok(AbundanceTable {
        factor_names: FACTOR_NAMES.iter().map(|s| s.to_string()).collect(),
        factor_levels: h.levels.factors().iter().map(|l| l.to_vec()).collect(),
        fuels: h.levels.fuel.clone(),
        treatments,
        counts,
    })
}

impl AbundanceTable {
    pub fn n_treatments(&self) -> usize {
        self.treatments.len()
    }

    pub fn n_fuels(&self) -> usize {
        self.fuels.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn column_totals(&self) -> Vec<u64> {
        let mut out = vec![0; self.n_fuels()];
        for row in &self.counts {
            for (o, &c) in out.iter_mut().zip(row) {
                *o += c;
            }
        }
        out
    }

    /// Level label of design factor `k` for treatment `t`.
    pub fn level_label(&self, t: usize, k: usize) -> &str {
        &self.factor_levels[k][self.treatments[t][k]]
    }

    /// `|`-joined level labels identifying each treatment.
    pub fn labels(&self) -> Vec<String> {
        (0..self.n_treatments())
            .map(|t| {
                (0..self.factor_names.len())
                    .map(|k| self.level_label(t, k))
                    .collect::<Vec<_>>()
                    .join("|")
            })
            .collect()
    }

    /// Design factor `k` as a per-treatment [`Factor`].
    pub fn factor(&self, k: usize) -> Factor {
        Factor {
            name: self.factor_names[k].clone(),
            levels: self.factor_levels[k].clone(),
            codes: self.treatments.iter().map(|t| t[k]).collect(),
        }
    }

    pub fn factor_by_name(&self, name: &str) -> Option<Factor> {
        self.factor_names.iter().position(|n| n == name).map(|k| self.factor(k))
    }

    /// Counts summed over treatments sharing a level of factor `k`.
    /// Levels with no households are omitted.
    pub fn pooled_by(&self, k: usize) -> (Vec<String>, Vec<Vec<u64>>) {
        let n_levels = self.factor_levels[k].len();
        let mut pooled = vec![vec![0u64; self.n_fuels()]; n_levels];
        for (t, row) in self.treatments.iter().zip(&self.counts) {
            for (p, &c) in pooled[t[k]].iter_mut().zip(row) {
                *p += c;
            }
        }
        pooled
            .into_iter()
            .enumerate()
            .filter(|(_, row)| row.iter().any(|&c| c > 0))
            .map(|(l, row)| (self.factor_levels[k][l].clone(), row))
            .unzip()
    }

    pub fn counts_as<T: Scalar>(&self) -> Array2<T> {
        let mut out = Array2::zeros((self.n_treatments(), self.n_fuels()));
        for (t, row) in self.counts.iter().enumerate() {
            for (g, &c) in row.iter().enumerate() {
                out[(t, g)] = T::from_u64(c).expect("count fits scalar");
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let header: Vec<&str> = self
            .factor_names
            .iter()
            .chain(&self.fuels)
            .map(String::as_str)
            .collect();
        wtr.write_record(&header).map_err(csv_write_err)?;
        for t in 0..self.n_treatments() {
            let mut rec: Vec<String> = (0..self.factor_names.len())
                .map(|k| self.level_label(t, k).to_string())
                .collect();
            rec.extend(self.counts[t].iter().map(|c| c.to_string()));
            wtr.write_record(&rec).map_err(csv_write_err)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Reads a table written by [`AbundanceTable::write_csv`]. When `levels`
    /// is given it fixes the level order, otherwise levels are sorted labels.
    pub fn read_csv(path: impl AsRef<Path>, levels: Option<&Levels>) -> Result<Self> {
        let path = path.as_ref();
        let table = read_csv_table(path)?;
        let file = path.display().to_string();
        if table.headers.len() < FACTOR_NAMES.len() + 1 {
            return Err(Error::MalformedCsv {
                file,
                line: 1,
                message: "expected four factor columns followed by fuel columns".into(),
            });
        }
        for (k, name) in FACTOR_NAMES.iter().enumerate() {
            if table.headers[k] != *name {
                return Err(Error::MalformedCsv {
                    file,
                    line: 1,
                    message: format!("column {} must be `{name}`", k + 1),
                });
            }
        }
        let fuels: Vec<String> = table.headers[FACTOR_NAMES.len()..].to_vec();
        let factor_levels: Vec<Vec<String>> = match levels {
            Some(l) => {
                if l.fuel != fuels {
                    return Err(Error::Config(format!(
                        "{file}: fuel columns {fuels:?} differ from declared fuels {:?}",
                        l.fuel
                    )));
                }
                l.factors().iter().map(|x| x.to_vec()).collect()
            }
            None => (0..FACTOR_NAMES.len())
                .map(|k| {
                    let set: BTreeSet<&str> =
                        table.records.iter().map(|(_, r)| r.get(k).unwrap_or("")).collect();
                    set.into_iter().map(str::to_string).collect()
                })
                .collect(),
        };
        let mut cells: BTreeMap<[usize; 4], Vec<u64>> = BTreeMap::new();
        for (line, rec) in &table.records {
            let mut key = [0usize; 4];
            for k in 0..FACTOR_NAMES.len() {
                let label = rec.get(k).unwrap_or("");
                key[k] = factor_levels[k].iter().position(|l| l == label).ok_or_else(|| {
                    Error::UnmappedLabels {
                        labels: vec![format!("{}: {label:?}", FACTOR_NAMES[k])],
                    }
                })?;
            }
            let counts = (FACTOR_NAMES.len()..table.headers.len())
                .map(|c| {
                    rec.get(c).unwrap_or("").parse::<u64>().map_err(|e| Error::MalformedCsv {
                        file: file.clone(),
                        line: *line,
                        message: format!("count column {}: {e}", c + 1),
                    })
                })
                .collect::<Result<Vec<u64>>>()?;
            if counts.iter().all(|&c| c == 0) {
                continue;
            }
            if cells.insert(key, counts).is_some() {
                return Err(Error::MalformedCsv {
                    file: file.clone(),
                    line: *line,
                    message: "duplicate treatment".into(),
                });
            }
        }
        let (treatments, counts) = cells.into_iter().unzip();
        Ok(Self {
            factor_names: FACTOR_NAMES.iter().map(|s| s.to_string()).collect(),
            factor_levels,
            fuels,
            treatments,
            counts,
        })
    }
}

pub(crate) fn csv_write_err(e: csv::Error) -> Error {
    Error::Numerical(format!("csv write: {e}"))
}

/// How zero counts are handled by [`log_transform`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogVariant {
    /// `ln(1 + x)`.
    #[default]
    Log1p,
    /// `ln(x) + 1` for `x > 0`, `0` at zero.
    Vegan,
}

pub fn log_value<T: Scalar>(x: T, variant: LogVariant) -> T {
    match variant {
        LogVariant::Log1p => x.ln_1p(),
        LogVariant::Vegan => {
            if x > T::zero() {
                x.ln() + T::one()
            } else {
                T::zero()
            }
        }
    }
}

/// Elementwise log transform of the abundance counts.
pub fn log_transform<T: Scalar>(a: &AbundanceTable, variant: LogVariant) -> Array2<T> {
    a.counts_as::<T>().mapv(|x| log_value(x, variant))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const FIXTURE_CONFIG: &str = r#"
[columns]
household_id = "hh"
ethnicity = "caste"
income = "income"
education = "edu"
geo = "mun"
fuel = "fuel"

[levels]
ethnicity = ["A", "B"]
income = ["low", "high"]
education = ["none", "some"]
geo = ["Himalayan", "Hilly"]
fuel = ["firewood", "lpg", "biogas"]

[ethnicity_map]
"a1" = "A"
"a2" = "A"
"b1" = "B"

[education_map]
"0" = "none"
"1" = "some"
"2" = "some"

[geo_map]
"11" = "Himalayan"
"12" = "Hilly"

[fuel_map]
"Wood" = "firewood"
"LP Gas" = "lpg"
"Gobar" = "biogas"
"#;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn ten_row_fixture() -> (tempfile::TempDir, std::path::PathBuf, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let demo = write(
            &dir,
            "demo.csv",
            "hh,caste,income,edu,mun\n\
             1,a1,low,0,11\n2,a2,low,1,11\n3,b1,high,2,12\n4,b1,low,0,12\n5,a1,high,1,11\n\
             6,a2,high,2,12\n7,b1,high,0,11\n8,a1,low,1,12\n9,b1,low,2,11\n10,a2,high,0,12\n",
        );
        let res = write(
            &dir,
            "res.csv",
            "hh,fuel\n1,Wood\n2,LP Gas\n3,Wood\n4,\n5,Gobar\n6,Wood\n7,NA\n8,Wood\n9,LP Gas\n10,Wood\n",
        );
        (dir, demo, res)
    }

    #[test]
    fn config_parses_and_validates() {
        let cfg = RegroupConfig::from_toml_str(FIXTURE_CONFIG).unwrap();
        assert_eq!(cfg.resolve(Field::Ethnicity, "a2"), Some(0));
        assert_eq!(cfg.resolve(Field::Income, "high"), Some(1));
        assert_eq!(cfg.resolve(Field::Fuel, "Gobar"), Some(2));
        assert_eq!(cfg.resolve(Field::Ethnicity, "zzz"), None);
    }

    #[test]
    fn config_rejects_undeclared_target() {
        let bad = FIXTURE_CONFIG.replace("\"b1\" = \"B\"", "\"b1\" = \"C\"");
        let err = RegroupConfig::from_toml_str(&bad).unwrap_err();
        assert!(err.to_string().contains("b1 -> C"), "{err}");
    }

    #[test]
    fn ten_rows_two_missing_fuel() {
        let (_dir, demo, res) = ten_row_fixture();
        let cfg = RegroupConfig::from_toml_str(FIXTURE_CONFIG).unwrap();
        let h = load_households(&demo, &res, &cfg).unwrap();
        assert_eq!(h.len(), 8);
        assert_eq!(h.report.input_rows, 10);
        assert_eq!(h.report.dropped, 2);
        assert_eq!(h.report.missing_by_field["fuel"], 2);
        assert_eq!(h.report.missing_by_field["ethnicity"], 0);
    }

    #[test]
    fn empty_files_give_empty_table() {
        let dir = tempfile::tempdir().unwrap();
        let demo = write(&dir, "d.csv", "");
        let res = write(&dir, "r.csv", "");
        let cfg = RegroupConfig::from_toml_str(FIXTURE_CONFIG).unwrap();
        let h = load_households(&demo, &res, &cfg).unwrap();
        assert!(h.is_empty());
        assert_eq!(h.report.dropped, 0);
    }

    #[test]
    fn unmapped_labels_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let demo = write(&dir, "d.csv", "hh,caste,income,edu,mun\n1,zz,low,0,11\n2,a1,mid,0,11\n");
        let res = write(&dir, "r.csv", "hh,fuel\n1,Wood\n2,Coal\n");
        let cfg = RegroupConfig::from_toml_str(FIXTURE_CONFIG).unwrap();
        match load_households(&demo, &res, &cfg).unwrap_err() {
            Error::UnmappedLabels { labels } => {
                assert_eq!(labels, vec![
                    "ethnicity: \"zz\"".to_string(),
                    "income: \"mid\"".to_string(),
                    "fuel: \"Coal\"".to_string(),
                ]);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_key_is_a_collision() {
        let dir = tempfile::tempdir().unwrap();
        let demo = write(&dir, "d.csv", "hh,caste,income,edu,mun\n1,a1,low,0,11\n1,a1,low,0,11\n");
        let res = write(&dir, "r.csv", "hh,fuel\n1,Wood\n");
        let cfg = RegroupConfig::from_toml_str(FIXTURE_CONFIG).unwrap();
        assert!(matches!(
            load_households(&demo, &res, &cfg),
            Err(Error::KeyCollision { .. })
        ));
    }

    #[test]
    fn ragged_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let demo = write(&dir, "d.csv", "hh,caste,income,edu,mun\n1,a1,low,0,11\n2,a1,low\n");
        let res = write(&dir, "r.csv", "hh,fuel\n1,Wood\n2,Wood\n");
        let cfg = RegroupConfig::from_toml_str(FIXTURE_CONFIG).unwrap();
        match load_households(&demo, &res, &cfg).unwrap_err() {
            Error::MalformedCsv { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unmatched_household_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let demo = write(&dir, "d.csv", "hh,caste,income,edu,mun\n1,a1,low,0,11\n2,a1,low,0,11\n");
        let res = write(&dir, "r.csv", "hh,fuel\n1,Wood\n3,Wood\n");
        let cfg = RegroupConfig::from_toml_str(FIXTURE_CONFIG).unwrap();
        let h = load_households(&demo, &res, &cfg).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h.report.unmatched_keys, 1);
        assert_eq!(h.report.orphan_resources, 1);
    }

    fn household(e: usize, i: usize, ed: usize, g: usize, f: usize, id: usize) -> Household {
        Household {
            household_id: id.to_string(),
            ethnicity: e,
            income: i,
            education: ed,
            geo: g,
            fuel: f,
        }
    }

    fn fixture_levels() -> Levels {
        RegroupConfig::from_toml_str(FIXTURE_CONFIG).unwrap().levels
    }

    #[test]
    fn singleton_household() {
        let h = HouseholdTable {
            levels: fixture_levels(),
            rows: vec![household(1, 0, 1, 0, 2, 0)],
            report: LoadReport::default(),
        };
        let a = build_abundance_table(&h).unwrap();
        assert_eq!(a.n_treatments(), 1);
        assert_eq!(a.counts, vec![vec![0, 0, 1]]);
        assert_eq!(a.treatments, vec![[1, 0, 1, 0]]);
    }

    #[test]
    fn twenty_households_six_combinations() {
        // Six combinations; (1,1,1,1) is deliberately absent.
        let combos = [
            [0, 0, 0, 0],
            [0, 1, 0, 1],
            [1, 0, 1, 0],
            [1, 1, 0, 0],
            [0, 0, 1, 1],
            [1, 0, 0, 1],
        ];
        let fuels = [0, 0, 1, 0, 2, 0, 1, 1, 0, 0, 2, 0, 0, 1, 0, 0, 0, 2, 1, 0];
        let rows: Vec<Household> = fuels
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                let c = combos[i % 6];
                household(c[0], c[1], c[2], c[3], f, i)
            })
            .collect();
        let h = HouseholdTable {
            levels: fixture_levels(),
            rows,
            report: LoadReport::default(),
        };
        let a = build_abundance_table(&h).unwrap();
        assert_eq!(a.n_treatments(), 6);
        // Per-fuel tallies of the fixture: 12 firewood, 5 lpg, 3 biogas.
        assert_eq!(a.column_totals(), vec![12, 5, 3]);
        assert_eq!(a.total(), 20);
        assert!(a.treatments.windows(2).all(|w| w[0] < w[1]));
        assert!(!a.treatments.contains(&[1, 1, 1, 1]));
    }

    #[test]
    fn empty_household_table_is_rejected() {
        let h = HouseholdTable {
            levels: fixture_levels(),
            rows: vec![],
            report: LoadReport::default(),
        };
        assert!(build_abundance_table(&h).is_err());
    }

    #[test]
    fn log_transform_examples() {
        assert_eq!(log_value(0.0f64, LogVariant::Log1p), 0.0);
        assert!((log_value(std::f64::consts::E - 1.0, LogVariant::Log1p) - 1.0).abs() < 1e-15);
        assert_eq!(log_value(0.0f64, LogVariant::Vegan), 0.0);
        assert_eq!(log_value(1.0f64, LogVariant::Vegan), 1.0);

        let a = AbundanceTable {
            factor_names: FACTOR_NAMES.iter().map(|s| s.to_string()).collect(),
            factor_levels: vec![vec!["x".into()]; 4],
            fuels: vec!["f1".into(), "f2".into()],
            treatments: vec![[0, 0, 0, 0], [0, 0, 0, 1]],
            counts: vec![vec![0, 3], vec![7, 0]],
        };
        let m = log_transform::<f64>(&a, LogVariant::Log1p);
        assert_eq!(m[(0, 0)], 0.0);
        assert!((m[(0, 1)] - 4f64.ln()).abs() < 1e-15);
        assert!((m[(1, 0)] - 8f64.ln()).abs() < 1e-15);
        assert_eq!(m[(1, 1)], 0.0);
    }

    #[test]
    fn csv_round_trip_keeps_order() {
        let (_dir, demo, res) = ten_row_fixture();
        let cfg = RegroupConfig::from_toml_str(FIXTURE_CONFIG).unwrap();
        let a = build_abundance_table(&load_households(&demo, &res, &cfg).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        a.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
        let back = AbundanceTable::read_csv(&path, Some(&cfg.levels)).unwrap();
        assert_eq!(back, a);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn rows_strategy() -> impl Strategy<Value = Vec<(usize, usize, usize, usize, usize)>> {
            proptest::collection::vec((0..2usize, 0..2usize, 0..2usize, 0..2usize, 0..3usize), 1..60)
        }

        proptest! {
            #[test]
            fn conservation_and_order_invariance(rows in rows_strategy(), seed in any::<u64>()) {
                let households: Vec<Household> = rows
                    .iter()
                    .enumerate()
                    .map(|(i, &(e, inc, ed, g, f))| household(e, inc, ed, g, f, i))
                    .collect();
                let table = HouseholdTable { levels: fixture_levels(), rows: households.clone(), report: LoadReport::default() };
                let a = build_abundance_table(&table).unwrap();
                prop_assert_eq!(a.total(), rows.len() as u64);
                prop_assert!(a.counts.iter().all(|r| r.iter().any(|&c| c > 0)));
                prop_assert_eq!(&build_abundance_table(&table).unwrap(), &a);

                let mut shuffled = households;
                use rand::{seq::SliceRandom, SeedableRng};
                shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                let t2 = HouseholdTable { levels: fixture_levels(), rows: shuffled, report: LoadReport::default() };
                prop_assert_eq!(build_abundance_table(&t2).unwrap(), a);
            }

            #[test]
            fn log_is_strictly_increasing(a in 0u32..1_000_000, b in 0u32..1_000_000) {
                for v in [LogVariant::Log1p, LogVariant::Vegan] {
                    let (la, lb) = (log_value(a as f64, v), log_value(b as f64, v));
                    if a < b { prop_assert!(la < lb); }
                    if a == b { prop_assert_eq!(la, lb); }
                }
            }
        }
    }
}
