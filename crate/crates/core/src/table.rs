//! Column-typed tables, CSV ingestion, seeded splitting and stratified sampling.
//!
//! A [`Table`] is immutable once built. Every row carries a [`RowId`] so that
//! subsets, unions and generated rows can be traced back to their origin.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single cell. Numeric cells are finite `f64`; categorical cells are tokens
/// compared by equality.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Num(f64),
    Cat(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Num(v) => Some(*v),
            Value::Cat(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Num(_) => None,
            Value::Cat(s) => Some(s),
        }
    }

    pub fn kind(&self) -> Kind {
        match self {
            Value::Num(_) => Kind::Numeric,
            Value::Cat(_) => Kind::Categorical,
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            // -0.0 and 0.0 compare equal so that they hash identically below.
            (Value::Num(a), Value::Num(b)) => (a + 0.0).total_cmp(&(b + 0.0)),
            (Value::Num(_), Value::Cat(_)) => Ordering::Less,
            (Value::Cat(_), Value::Num(_)) => Ordering::Greater,
            (Value::Cat(a), Value::Cat(b)) => a.cmp(b),
        }
    }
}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self {
            Value::Num(v) => {
                0u8.hash(state);
                (v + 0.0).to_bits().hash(state);
            }
            Value::Cat(s) => {
                1u8.hash(state);
                s.hash(state);
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // `Display` for f64 is the shortest representation that round-trips.
            Value::Num(v) => write!(f, "{v}"),
            Value::Cat(s) => f.write_str(s),
        }
    }
}

/// One value per schema attribute, target included.
pub type Record = Vec<Value>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Numeric,
    Categorical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "classification" => Ok(Task::Classification),
            "regression" => Ok(Task::Regression),
            other => Err(Error::Argument(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub kind: Kind,
}

impl Attribute {
    pub fn new(name: impl Into<String>, kind: Kind) -> Self {
        Self { name: name.into(), kind }
    }
}

#[derive(Serialize, Deserialize)]
struct SchemaDoc {
    attributes: Vec<Attribute>,
    target: String,
    task: Task,
}

/// Ordered attributes plus the designated target.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaDoc", into = "SchemaDoc")]
pub struct Schema {
    attributes: Vec<Attribute>,
    target: usize,
    task: Task,
}

impl TryFrom<SchemaDoc> for Schema {
    type Error = Error;

    fn try_from(doc: SchemaDoc) -> Result<Self> {
        Schema::new(doc.attributes, &doc.target, doc.task)
    }
}

impl From<Schema> for SchemaDoc {
    fn from(s: Schema) -> Self {
        SchemaDoc {
            target: s.target_name().to_string(),
            attributes: s.attributes,
            task: s.task,
        }
    }
}

impl Schema {
    pub fn new(attributes: Vec<Attribute>, target: &str, task: Task) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for a in &attributes {
            if !seen.insert(a.name.as_str()) {
                return Err(Error::Schema(format!("duplicate attribute `{}`", a.name)));
            }
        }
        let target_idx = attributes
            .iter()
            .position(|a| a.name == target)
            .ok_or_else(|| Error::Schema(format!("target column `{target}` is absent")))?;
        if task == Task::Regression && attributes[target_idx].kind != Kind::Numeric {
            return Err(Error::Schema(format!(
                "regression requires a numeric target, `{target}` is categorical"
            )));
        }
        Ok(Self { attributes, target: target_idx, task })
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn target_name(&self) -> &str {
        &self.attributes[self.target].name
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn kind(&self, index: usize) -> Kind {
        self.attributes[index].kind
    }

    /// Indices of every non-target attribute, in schema order.
    pub fn feature_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.attributes.len()).filter(move |&i| i != self.target)
    }

    pub fn header(&self) -> Vec<&str> {
        self.attributes.iter().map(|a| a.name.as_str()).collect()
    }

    /// Checks arity and per-column kinds of a record.
    pub fn check_record(&self, record: &[Value]) -> Result<()> {
        if record.len() != self.attributes.len() {
            return Err(Error::Schema(format!(
                "record has {} values, schema has {} attributes",
                record.len(),
                self.attributes.len()
            )));
        }
        for (v, a) in record.iter().zip(&self.attributes) {
            if v.kind() != a.kind {
                return Err(Error::Schema(format!(
                    "attribute `{}` expects {:?}, got `{v}`",
                    a.name, a.kind
                )));
            }
            if let Value::Num(x) = v {
                if !x.is_finite() {
                    return Err(Error::Schema(format!("attribute `{}` is not finite", a.name)));
                }
            }
        }
        Ok(())
    }
}

/// Stable identity of a row. Original rows are numbered by their position in
/// the source file; generated rows live above [`RowId::GENERATED_BASE`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RowId(pub u64);

impl RowId {
    pub const GENERATED_BASE: u64 = 1 << 48;

    pub fn is_generated(self) -> bool {
        self.0 >= Self::GENERATED_BASE
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Generated,
    Mixed,
}

#[derive(Serialize, Deserialize)]
struct TableDoc {
    schema: Schema,
    provenance: Provenance,
    ids: Vec<RowId>,
    rows: Vec<Record>,
}

impl TryFrom<TableDoc> for Table {
    type Error = Error;

    fn try_from(d: TableDoc) -> Result<Self> {
        Table::with_ids(Arc::new(d.schema), d.rows, d.ids, d.provenance)
    }
}

impl From<Table> for TableDoc {
    fn from(t: Table) -> Self {
        TableDoc { schema: (*t.schema).clone(), provenance: t.provenance, ids: t.ids, rows: t.rows }
    }
}

/// Rows over a shared schema. Serializes with its schema, ids and provenance.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "TableDoc", into = "TableDoc")]
pub struct Table {
    schema: Arc<Schema>,
    rows: Vec<Record>,
    ids: Vec<RowId>,
    provenance: Provenance,
}

impl Table {
    /// Builds a table, numbering rows from zero.
    pub fn new(schema: Arc<Schema>, rows: Vec<Record>, provenance: Provenance) -> Result<Self> {
        let ids = (0..rows.len() as u64).map(RowId).collect();
        Self::with_ids(schema, rows, ids, provenance)
    }

    pub fn with_ids(
        schema: Arc<Schema>,
        rows: Vec<Record>,
        ids: Vec<RowId>,
        provenance: Provenance,
    ) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::Argument("row id count does not match row count".into()));
        }
        for r in &rows {
            schema.check_record(r)?;
        }
        Ok(Self { schema, rows, ids, provenance })
    }

    pub fn empty(schema: Arc<Schema>, provenance: Provenance) -> Self {
        Self { schema, rows: Vec::new(), ids: Vec::new(), provenance }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn rows(&self) -> &[Record] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &Record {
        &self.rows[i]
    }

    pub fn ids(&self) -> &[RowId] {
        &self.ids
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn target(&self, i: usize) -> &Value {
        &self.rows[i][self.schema.target()]
    }

    pub fn targets(&self) -> impl Iterator<Item = &Value> + '_ {
        let t = self.schema.target();
        self.rows.iter().map(move |r| &r[t])
    }

    /// Rows at `indices`, in the given order, keeping ids and provenance.
    pub fn select(&self, indices: &[usize]) -> Table {
        Table {
            schema: Arc::clone(&self.schema),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
            provenance: self.provenance,
        }
    }

    /// Numeric (min, max) per numeric attribute over all rows.
    pub fn numeric_ranges(&self) -> BTreeMap<usize, (f64, f64)> {
        let mut out = BTreeMap::new();
        for (i, a) in self.schema.attributes().iter().enumerate() {
            if a.kind != Kind::Numeric {
                continue;
            }
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for r in &self.rows {
                if let Value::Num(v) = r[i] {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            if lo <= hi {
                out.insert(i, (lo, hi));
            }
        }
        out
    }

    /// Relabels provenance without touching the rows.
    pub fn with_provenance(mut self, provenance: Provenance) -> Table {
        self.provenance = provenance;
        self
    }
}

impl PartialEq for Table {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema
            && self.rows == other.rows
            && self.ids == other.ids
            && self.provenance == other.provenance
    }
}

/// Concatenates `a` then `b`. Provenance becomes `Mixed` when the inputs
/// disagree; an empty operand does not affect provenance.
pub fn union(a: &Table, b: &Table) -> Result<Table> {
    if a.schema != b.schema {
        return Err(Error::Schema("cannot union tables with different schemas".into()));
    }
    let provenance = if b.is_empty() {
        a.provenance
    } else if a.is_empty() || a.provenance == b.provenance {
        b.provenance
    } else {
        Provenance::Mixed
    };
    let mut rows = a.rows.clone();
    rows.extend(b.rows.iter().cloned());
    let mut ids = a.ids.clone();
    ids.extend_from_slice(&b.ids);
    Ok(Table { schema: Arc::clone(&a.schema), rows, ids, provenance })
}

fn parse_num(field: &str) -> Option<f64> {
    field.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a CSV table from any reader. See [`load_csv`].
pub fn read_csv<R: Read>(
    reader: R,
    target: &str,
    task: Task,
    schema_hint: Option<&Schema>,
) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(Error::EmptyInput("file is empty".into())),
    };
    let names: Vec<String> = header.iter().map(|s| s.trim().to_string()).collect();
    if names.iter().all(|n| n.is_empty()) {
        return Err(Error::EmptyInput("header row is empty".into()));
    }

    let mut raw: Vec<Vec<String>> = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec.get(0).is_some_and(|f| f.trim().is_empty()) {
            continue;
        }
        if rec.len() != names.len() {
            return Err(Error::Load {
                line,
                message: format!("expected {} fields, found {}", names.len(), rec.len()),
            });
        }
        if let Some(col) = rec.iter().position(|f| f.trim().is_empty()) {
            return Err(Error::Load {
                line,
                message: format!("missing value in column `{}`", names[col]),
            });
        }
        raw.push(rec.iter().map(|s| s.trim().to_string()).collect());
    }
    if raw.is_empty() {
        return Err(Error::EmptyInput("file has a header but no data rows".into()));
    }

    let schema = match schema_hint {
        Some(hint) => {
            let hint_names: Vec<&str> = hint.header();
            if hint_names != names.iter().map(String::as_str).collect::<Vec<_>>() {
                return Err(Error::Schema("schema hint does not match the CSV header".into()));
            }
            hint.clone()
        }
        None => {
            let attributes = names
                .iter()
                .enumerate()
                .map(|(c, name)| {
                    let numeric = raw.iter().all(|r| parse_num(&r[c]).is_some());
                    let kind = if numeric {
                        Kind::Numeric
                    } else {
                        Kind::Categorical
                    };
                    Attribute::new(name.clone(), kind)
                })
                .collect();
            Schema::new(attributes, target, task)?
        }
    };
    let schema = Arc::new(schema);

    let mut rows = Vec::with_capacity(raw.len());
    for (r, fields) in raw.into_iter().enumerate() {
        let mut record = Vec::with_capacity(fields.len());
        for (c, f) in fields.into_iter().enumerate() {
            let v = match schema.kind(c) {
                Kind::Numeric => Value::Num(parse_num(&f).ok_or_else(|| Error::Load {
                    line: r as u64 + 2,
                    message: format!("`{f}` is not numeric in column `{}`", names[c]),
                })?),
                Kind::Categorical => Value::Cat(f),
            };
            record.push(v);
        }
        rows.push(record);
    }
    Table::new(schema, rows, Provenance::Original)
}

/// Loads a CSV file with a header row. Column kinds are inferred (every value
/// parses as a finite number means numeric) unless `schema_hint` is given.
/// Rows with missing values are rejected.
pub fn load_csv(
    path: impl AsRef<Path>,
    target: &str,
    task: Task,
    schema_hint: Option<&Schema>,
) -> Result<Table> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(std::io::BufReader::new(file), target, task, schema_hint)
}

pub fn write_csv_to<W: Write>(table: &Table, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(table.schema().header())?;
    for r in table.rows() {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(table: &Table, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_csv_to(table, std::io::BufWriter::new(file))
}

/// Mixes a base seed with call-site indices into an independent stream seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(base), |acc, p| mix(acc ^ p))
}

/// Train/validation/test fractions plus the shuffle seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_frac: f64, val_frac: f64, test_frac: f64, seed: u64) -> Result<Self> {
        let s = Self { train_frac, val_frac, test_frac, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::Split("split fractions must be positive".into()));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Split("split fractions must sum to 1".into()));
        }
        Ok(())
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_frac: 0.6, val_frac: 0.2, test_frac: 0.2, seed: 0 }
    }
}

/// Integer allocation of `total` proportional to `weights` by the largest
/// remainder method. Ties on the remainder go to the lower index.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn class_strata(t: &Table) -> BTreeMap<&Value, Vec<usize>> {
    let mut strata: BTreeMap<&Value, Vec<usize>> = BTreeMap::new();
    for (i, y) in t.targets().enumerate() {
        strata.entry(y).or_default().push(i);
    }
    strata
}

/// Seeded three-way split. Classification tables are stratified by class when
/// every class has at least three rows; otherwise the split is a plain
/// shuffle. Each part keeps the input row order.
pub fn split(t: &Table, spec: &SplitSpec) -> Result<(Table, Table, Table)> {
    spec.validate()?;
    if t.len() < 5 {
        return Err(Error::Split(format!("need at least 5 rows, got {}", t.len())));
    }
    let fracs = [spec.train_frac, spec.val_frac, spec.test_frac];
    let strata: Vec<Vec<usize>> = match t.schema().task() {
        Task::Classification => {
            let by_class = class_strata(t);
            if by_class.values().all(|v| v.len() >= 3) {
                by_class.into_values().collect()
            } else {
                vec![(0..t.len()).collect()]
            }
        }
        Task::Regression => vec![(0..t.len()).collect()],
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for mut stratum in strata {
        stratum.shuffle(&mut rng);
        let counts = largest_remainder(stratum.len(), &fracs);
        let mut it = stratum.into_iter();
        for (part, n) in parts.iter_mut().zip(counts) {
            part.extend(it.by_ref().take(n));
        }
    }
    for (part, name) in parts.iter().zip(["train", "validation", "test"]) {
        if part.is_empty() {
            return Err(Error::Split(format!("{name} fraction rounds to zero rows")));
        }
    }
    let [mut a, mut b, mut c] = parts;
    a.sort_unstable();
    b.sort_unstable();
    c.sort_unstable();
    Ok((t.select(&a), t.select(&b), t.select(&c)))
}

/// Stratified sample of `n` rows: by class for classification, by quartile of
/// the target for regression. Counts per stratum use largest-remainder
/// rounding; returned rows keep the input order.
pub fn stratified_sample(t: &Table, n: usize, seed: u64) -> Result<Table> {
    if n == 0 || n > t.len() {
        return Err(Error::Argument(format!("sample size {n} outside 1..={}", t.len())));
    }
    let strata: Vec<Vec<usize>> = match t.schema().task() {
        Task::Classification => class_strata(t).into_values().collect(),
        Task::Regression => {
            let mut order: Vec<usize> = (0..t.len()).collect();
            order.sort_by(|&a, &b| t.target(a).cmp(t.target(b)).then(a.cmp(&b)));
            let mut bins: Vec<Vec<usize>> = vec![Vec::new(); 4];
            let len = order.len();
            for (rank, i) in order.into_iter().enumerate() {
                bins[rank * 4 / len].push(i);
            }
            bins.into_iter().filter(|b| !b.is_empty()).collect()
        }
    };
    let sizes: Vec<f64> = strata.iter().map(|s| s.len() as f64).collect();
    let counts = largest_remainder(n, &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(n);
    for (mut stratum, k) in strata.into_iter().zip(counts) {
        stratum.shuffle(&mut rng);
        chosen.extend(stratum.into_iter().take(k));
    }
    chosen.sort_unstable();
    Ok(t.select(&chosen))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cls_schema() -> Arc<Schema> {
        Arc::new(
            Schema::new(
                vec![Attribute::new("a", Kind::Numeric), Attribute::new("y", Kind::Categorical)],
                "y",
                Task::Classification,
            )
            .unwrap(),
        )
    }

    fn cls_table(counts: &[(&str, usize)]) -> Table {
        let mut rows = Vec::new();
        let mut k = 0.0;
        for (label, n) in counts {
            for _ in 0..*n {
                rows.push(vec![Value::Num(k), Value::Cat(label.to_string())]);
                k += 1.0;
            }
        }
        Table::new(cls_schema(), rows, Provenance::Original).unwrap()
    }

    #[test]
    fn infers_kinds_from_parseability() {
        let t = read_csv("a,b,y\n1,x,0\n2,x,1\n".as_bytes(), "y", Task::Classification, None)
            .unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.schema().kind(0), Kind::Numeric);
        assert_eq!(t.schema().kind(1), Kind::Categorical);
    }

    #[test]
    fn arity_mismatch_names_the_line() {
        let err = read_csv("a,b,y\n1,x,0\n2,x\n".as_bytes(), "y", Task::Classification, None)
            .unwrap_err();
        match err {
            Error::Load { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_and_missing_inputs_are_rejected() {
        assert!(matches!(
            read_csv("".as_bytes(), "y", Task::Classification, None),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            read_csv("a,y\n1,\n".as_bytes(), "y", Task::Classification, None),
            Err(Error::Load { line: 2, .. })
        ));
        assert!(matches!(
            read_csv("a,b\n1,2\n".as_bytes(), "y", Task::Classification, None),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn regression_needs_numeric_target() {
        let err = read_csv("a,y\n1,x\n".as_bytes(), "y", Task::Regression, None).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn schema_hint_overrides_inference() {
        let hint = Schema::new(
            vec![Attribute::new("a", Kind::Categorical), Attribute::new("y", Kind::Numeric)],
            "y",
            Task::Regression,
        )
        .unwrap();
        let t = read_csv("a,y\n1,2\n3,4\n".as_bytes(), "y", Task::Regression, Some(&hint)).unwrap();
        assert_eq!(t.row(0)[0], Value::Cat("1".into()));
    }

    #[test]
    fn csv_round_trip_preserves_values() {
        let src = "a,b,y\n0.1,x,1\n2.5e-7,y,0\n-3,\"q,r\",1\n1e21,x,0\n0.30000000000000004,z,1\n7,x,0\n";
        let t = read_csv(src.as_bytes(), "y", Task::Classification, None).unwrap();
        let mut buf = Vec::new();
        write_csv_to(&t, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), "y", Task::Classification, None).unwrap();
        assert_eq!(t.rows(), back.rows());
        assert_eq!(t.schema(), back.schema());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let schema = Arc::new(
            Schema::new(vec![Attribute::new("y", Kind::Numeric)], "y", Task::Regression).unwrap(),
        );
        let rows = (0..10).map(|i| vec![Value::Num(i as f64)]).collect();
        let t = Table::new(schema, rows, Provenance::Original).unwrap();
        let spec = SplitSpec::new(0.6, 0.2, 0.2, 7).unwrap();
        let (a, b, c) = split(&t, &spec).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (6, 2, 2));
        let (a2, b2, c2) = split(&t, &spec).unwrap();
        assert_eq!((a.ids(), b.ids(), c.ids()), (a2.ids(), b2.ids(), c2.ids()));
        let mut all: Vec<RowId> = [a.ids(), b.ids(), c.ids()].concat();
        all.sort();
        assert_eq!(all, t.ids());
    }

    #[test]
    fn stratified_split_counts_per_class() {
        // 80/20 classes: 0.6 * 80 = 48 and 0.6 * 20 = 12 exactly.
        let t = cls_table(&[("A", 80), ("B", 20)]);
        let (train, val, test) = split(&t, &SplitSpec::new(0.6, 0.2, 0.2, 3).unwrap()).unwrap();
        let count = |t: &Table, c: &str| t.targets().filter(|y| y.as_str() == Some(c)).count();
        assert_eq!((count(&train, "A"), count(&train, "B")), (48, 12));
        assert_eq!((count(&val, "A"), count(&val, "B")), (16, 4));
        assert_eq!((count(&test, "A"), count(&test, "B")), (16, 4));
    }

    #[test]
    fn split_rejects_tiny_tables_and_empty_parts() {
        let t = cls_table(&[("A", 4)]);
        assert!(matches!(split(&t, &SplitSpec::default()), Err(Error::Split(_))));
        let t = cls_table(&[("A", 5)]);
        let spec = SplitSpec::new(0.9, 0.05, 0.05, 1).unwrap();
        assert!(matches!(split(&t, &spec), Err(Error::Split(_))));
    }

    #[test]
    fn stratified_sample_matches_largest_remainder() {
        let t = cls_table(&[("A", 90), ("B", 10)]);
        let s = stratified_sample(&t, 10, 4).unwrap();
        let a = s.targets().filter(|y| y.as_str() == Some("A")).count();
        assert_eq!((a, s.len() - a), (9, 1));

        let full = stratified_sample(&t, t.len(), 1).unwrap();
        assert_eq!(full.len(), t.len());
        assert!(matches!(stratified_sample(&t, 0, 1), Err(Error::Argument(_))));
        assert!(matches!(stratified_sample(&t, 101, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn regression_sample_takes_one_per_quartile() {
        let schema = Arc::new(
            Schema::new(vec![Attribute::new("y", Kind::Numeric)], "y", Task::Regression).unwrap(),
        );
        let rows = (1..=100).map(|i| vec![Value::Num(i as f64)]).collect();
        let t = Table::new(schema, rows, Provenance::Original).unwrap();
        let s = stratified_sample(&t, 4, 9).unwrap();
        let mut bins: Vec<usize> =
            s.targets().map(|y| ((y.as_f64().unwrap() - 1.0) / 25.0) as usize).collect();
        bins.sort();
        assert_eq!(bins, vec![0, 1, 2, 3]);
    }

    #[test]
    fn union_rules() {
        let a = cls_table(&[("A", 3)]);
        let empty = Table::empty(a.schema_arc().clone(), Provenance::Generated);
        assert_eq!(union(&a, &empty).unwrap(), a);
        let g = cls_table(&[("B", 2)]).with_provenance(Provenance::Generated);
        let u = union(&a, &g).unwrap();
        assert_eq!(u.len(), 5);
        assert_eq!(u.provenance(), Provenance::Mixed);

        let other = Arc::new(
            Schema::new(vec![Attribute::new("y", Kind::Numeric)], "y", Task::Regression).unwrap(),
        );
        let t = Table::new(other, vec![vec![Value::Num(1.0)]], Provenance::Original).unwrap();
        assert!(matches!(union(&a, &t), Err(Error::Schema(_))));
    }

    #[test]
    fn largest_remainder_sums_to_total() {
        assert_eq!(largest_remainder(10, &[0.6, 0.2, 0.2]), vec![6, 2, 2]);
        assert_eq!(largest_remainder(3, &[1.0, 1.0]), vec![2, 1]);
        assert_eq!(largest_remainder(7, &[3.0, 3.0, 1.0]).iter().sum::<usize>(), 7);
    }
}
