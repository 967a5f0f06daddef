//! Product catalog: categories, attributes, products and labeled cases.
//!
//! Datasets are newline-delimited JSON. Every record carries a `kind`
//! discriminator (`pc`, `sa`, `product` or `case`). A dataset is either one
//! file or a directory whose `*.jsonl` files are read in file-name order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, IntegrityError, Location, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductCategory {
    pub id: String,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub definition: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    #[default]
    Text,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredAttribute {
    pub id: String,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub definition: String,
    #[serde(default)]
    pub value_kind: ValueKind,
}

impl StructuredAttribute {
    /// Name shown to the model; falls back to the id.
    pub fn display_name(&self) -> &str {
        if self.name.trim().is_empty() {
            &self.id
        } else {
            &self.name
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Product {
    pub id: String,
    pub pc_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub bullets: Vec<String>,
    #[serde(default)]
    pub sa_values: BTreeMap<String, String>,
}

impl Product {
    fn has_unstructured_data(&self) -> bool {
        !self.title.trim().is_empty()
            || !self.description.trim().is_empty()
            || self.bullets.iter().any(|b| !b.trim().is_empty())
    }
}

/// Quality task a case is labeled for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Correctness,
    Applicability,
}

impl Task {
    pub fn positive(self) -> Decision {
        match self {
            Task::Correctness => Decision::Correct,
            Task::Applicability => Decision::Applicable,
        }
    }

    pub fn negative(self) -> Decision {
        match self {
            Task::Correctness => Decision::Incorrect,
            Task::Applicability => Decision::Inapplicable,
        }
    }

    /// The two admissible labels, positive first.
    pub fn labels(self) -> [Decision; 2] {
        [self.positive(), self.negative()]
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Correctness => "correctness",
            Task::Applicability => "applicability",
        })
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "correctness" => Ok(Task::Correctness),
            "applicability" => Ok(Task::Applicability),
            other => Err(Error::Argument(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gold {
    Positive,
    Negative,
}

/// A binary quality decision. `Correct` and `Applicable` are the positive
/// classes of their tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Decision {
    Correct,
    Incorrect,
    Applicable,
    Inapplicable,
}

impl Decision {
    pub fn task(self) -> Task {
        match self {
            Decision::Correct | Decision::Incorrect => Task::Correctness,
            Decision::Applicable | Decision::Inapplicable => Task::Applicability,
        }
    }

    pub fn is_positive(self) -> bool {
        matches!(self, Decision::Correct | Decision::Applicable)
    }

    pub fn label(self) -> &'static str {
        match self {
            Decision::Correct => "Correct",
            Decision::Incorrect => "Incorrect",
            Decision::Applicable => "Applicable",
            Decision::Inapplicable => "Inapplicable",
        }
    }

    pub fn from_gold(task: Task, gold: Gold) -> Self {
        match gold {
            Gold::Positive => task.positive(),
            Gold::Negative => task.negative(),
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

fn default_language() -> String {
    "en".to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledCase {
    /// Assigned as `case-NNNNN` (load order) when the record has none.
    #[serde(default)]
    pub id: String,
    pub product_id: String,
    pub sa_id: String,
    pub test_value: String,
    pub task: Task,
    pub gold: Gold,
    #[serde(default = "default_language")]
    pub language: String,
}

impl LabeledCase {
    pub fn gold_decision(&self) -> Decision {
        Decision::from_gold(self.task, self.gold)
    }
}

/// A (product category, structured attribute) pair, ordered by PC then SA.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairKey {
    pub pc_id: String,
    pub sa_id: String,
}

impl PairKey {
    pub fn new(pc_id: impl Into<String>, sa_id: impl Into<String>) -> Self {
        Self {
            pc_id: pc_id.into(),
            sa_id: sa_id.into(),
        }
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.pc_id, self.sa_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CatalogCounts {
    pub pcs: usize,
    pub sas: usize,
    pub products: usize,
    pub cases: usize,
}

impl fmt::Display for CatalogCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} categories, {} attributes, {} products, {} cases",
            self.pcs, self.sas, self.products, self.cases
        )
    }
}

/// An immutable, indexed catalog. Lookups are by id.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    pcs: Vec<ProductCategory>,
    sas: Vec<StructuredAttribute>,
    products: Vec<Product>,
    cases: Vec<LabeledCase>,
    pc_index: HashMap<String, usize>,
    sa_index: HashMap<String, usize>,
    product_index: HashMap<String, usize>,
    case_index: HashMap<String, usize>,
    unknown_fields: usize,
}

impl PartialEq for Catalog {
    fn eq(&self, other: &Self) -> bool {
        self.pcs == other.pcs
            && self.sas == other.sas
            && self.products == other.products
            && self.cases == other.cases
    }
}

fn index_by<T>(items: &[T], key: impl Fn(&T) -> &str) -> HashMap<String, usize> {
    let mut index = HashMap::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        index.entry(key(item).to_string()).or_insert(i);
    }
    index
}

fn assign_case_ids(cases: &mut [LabeledCase]) {
    for (n, case) in cases.iter_mut().enumerate() {
        if case.id.trim().is_empty() {
            case.id = format!("case-{:05}", n + 1);
        }
    }
}

impl Catalog {
    /// Builds a catalog without integrity checks. Use [`validate_catalog`]
    /// to inspect the result; the first record wins on duplicate ids.
    pub fn new(
        pcs: Vec<ProductCategory>,
        sas: Vec<StructuredAttribute>,
        products: Vec<Product>,
        mut cases: Vec<LabeledCase>,
    ) -> Self {
        assign_case_ids(&mut cases);
        Self {
            pc_index: index_by(&pcs, |p| &p.id),
            sa_index: index_by(&sas, |s| &s.id),
            product_index: index_by(&products, |p| &p.id),
            case_index: index_by(&cases, |c| &c.id),
            pcs,
            sas,
            products,
            cases,
            unknown_fields: 0,
        }
    }

    pub fn pcs(&self) -> &[ProductCategory] {
        &self.pcs
    }

    pub fn sas(&self) -> &[StructuredAttribute] {
        &self.sas
    }

    pub fn products(&self) -> &[Product] {
        &self.products
    }

    pub fn cases(&self) -> &[LabeledCase] {
        &self.cases
    }

    pub fn pc(&self, id: &str) -> Option<&ProductCategory> {
        self.pc_index.get(id).map(|&i| &self.pcs[i])
    }

    pub fn sa(&self, id: &str) -> Option<&StructuredAttribute> {
        self.sa_index.get(id).map(|&i| &self.sas[i])
    }

    pub fn product(&self, id: &str) -> Option<&Product> {
        self.product_index.get(id).map(|&i| &self.products[i])
    }

    pub fn case(&self, id: &str) -> Option<&LabeledCase> {
        self.case_index.get(id).map(|&i| &self.cases[i])
    }

    /// The PC-SA pair a case is about, if its product resolves.
    pub fn case_pair(&self, case: &LabeledCase) -> Option<PairKey> {
        self.product(&case.product_id)
            .map(|p| PairKey::new(&p.pc_id, &case.sa_id))
    }

    pub fn counts(&self) -> CatalogCounts {
        CatalogCounts {
            pcs: self.pcs.len(),
            sas: self.sas.len(),
            products: self.products.len(),
            cases: self.cases.len(),
        }
    }

    /// Number of record fields the loader did not recognise.
    pub fn unknown_fields(&self) -> usize {
        self.unknown_fields
    }

    pub fn is_empty(&self) -> bool {
        self.pcs.is_empty() && self.sas.is_empty() && self.products.is_empty() && self.cases.is_empty()
    }

    /// Writes the catalog as JSONL: categories, attributes, products, cases.
    pub fn write_jsonl(&self, writer: impl Write) -> Result<()> {
        let mut out = BufWriter::new(writer);
        let io = |e| Error::io("writing catalog", e);
        for pc in &self.pcs {
            write_record(&mut out, "pc", pc)?;
        }
        for sa in &self.sas {
            write_record(&mut out, "sa", sa)?;
        }
        for product in &self.products {
            write_record(&mut out, "product", product)?;
        }
        for case in &self.cases {
            write_record(&mut out, "case", case)?;
        }
        out.flush().map_err(io)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        self.write_jsonl(file)
    }
}

fn write_record<T: Serialize>(out: &mut impl Write, kind: &str, record: &T) -> Result<()> {
    let mut value = serde_json::to_value(record).map_err(|e| Error::json("serializing record", e))?;
    if let Value::Object(map) = &mut value {
        let mut tagged = Map::with_capacity(map.len() + 1);
        tagged.insert("kind".into(), Value::String(kind.into()));
        tagged.extend(std::mem::take(map));
        *map = tagged;
    }
    serde_json::to_writer(&mut *out, &value).map_err(|e| Error::json("writing record", e))?;
    out.write_all(b"\n")
        .map_err(|e| Error::io("writing catalog", e))
}

const PC_FIELDS: &[&str] = &["id", "name", "definition"];
const SA_FIELDS: &[&str] = &["id", "name", "definition", "value_kind"];
const PRODUCT_FIELDS: &[&str] = &["id", "pc_id", "title", "description", "bullets", "sa_values"];
const CASE_FIELDS: &[&str] = &["id", "product_id", "sa_id", "test_value", "task", "gold", "language"];

#[derive(Default)]
struct RawCatalog {
    pcs: Vec<(ProductCategory, Location)>,
    sas: Vec<(StructuredAttribute, Location)>,
    products: Vec<(Product, Location)>,
    cases: Vec<(LabeledCase, Location)>,
    unknown_fields: usize,
}

fn parse_fields<T: for<'de> Deserialize<'de>>(
    mut map: Map<String, Value>,
    known: &[&str],
    location: &Location,
    unknown: &mut usize,
) -> Result<T> {
    map.remove("kind");
    let extra = map.keys().filter(|k| !known.contains(&k.as_str())).count();
    if extra > 0 {
        log::warn!("{location}: ignoring {extra} unknown field(s)");
        *unknown += extra;
    }
    serde_json::from_value(Value::Object(map)).map_err(|e| Error::Parse {
        location: location.clone(),
        message: e.to_string(),
    })
}

fn parse_file(path: &Path, raw: &mut RawCatalog) -> Result<()> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let location = Location {
            file: path.to_path_buf(),
            line: i + 1,
        };
        let parse_err = |message: String| Error::Parse {
            location: location.clone(),
            message,
        };
        let value: Value = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let Value::Object(map) = value else {
            return Err(parse_err("record is not a JSON object".into()));
        };
        let kind = map
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| parse_err("missing string field `kind`".into()))?
            .to_string();
        let unknown = &mut raw.unknown_fields;
        match kind.as_str() {
            "pc" => raw
                .pcs
                .push((parse_fields(map, PC_FIELDS, &location, unknown)?, location)),
            "sa" => raw
                .sas
                .push((parse_fields(map, SA_FIELDS, &location, unknown)?, location)),
            "product" => raw
                .products
                .push((parse_fields(map, PRODUCT_FIELDS, &location, unknown)?, location)),
            "case" => raw
                .cases
                .push((parse_fields(map, CASE_FIELDS, &location, unknown)?, location)),
            other => return Err(parse_err(format!("unknown record kind `{other}`"))),
        }
    }
    Ok(())
}

fn dataset_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files = Vec::new();
        let entries =
            fs::read_dir(path).map_err(|e| Error::io(format!("listing {}", path.display()), e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(format!("listing {}", path.display()), e))?;
            let p = entry.path();
            if p.is_file() && p.extension().is_some_and(|ext| ext == "jsonl") {
                files.push(p);
            }
        }
        files.sort();
        Ok(files)
    } else if path.is_file() {
        Ok(vec![path.to_path_buf()])
    } else {
        Err(Error::Config(format!(
            "catalog path {} does not exist",
            path.display()
        )))
    }
}

fn check_duplicates<'a, T: 'a>(
    kind: &'static str,
    records: impl IntoIterator<Item = &'a (T, Location)>,
    id: impl Fn(&T) -> &str,
) -> Result<()> {
    let mut seen: BTreeMap<&str, Vec<Location>> = BTreeMap::new();
    let mut order = Vec::new();
    for (record, location) in records {
        let key = id(record);
        let entry = seen.entry(key).or_default();
        if entry.len() == 1 {
            order.push(key);
        }
        entry.push(location.clone());
    }
    if let Some(first) = order.first() {
        return Err(IntegrityError::DuplicateId {
            kind,
            id: first.to_string(),
            locations: seen.remove(first).unwrap_or_default(),
        }
        .into());
    }
    Ok(())
}

/// Loads a JSONL dataset (file or directory) into a fully linked catalog.
///
/// Malformed records fail with a parse error carrying the line number;
/// duplicate ids and dangling references fail with an integrity error.
pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog> {
    let path = path.as_ref();
    let mut raw = RawCatalog::default();
    for file in dataset_files(path)? {
        parse_file(&file, &mut raw)?;
    }

    let mut cases: Vec<LabeledCase> = raw.cases.iter().map(|(c, _)| c.clone()).collect();
    assign_case_ids(&mut cases);
    let case_records: Vec<(LabeledCase, Location)> = cases
        .into_iter()
        .zip(raw.cases.iter().map(|(_, l)| l.clone()))
        .collect();

    check_duplicates("pc", &raw.pcs, |p| &p.id)?;
    check_duplicates("sa", &raw.sas, |s| &s.id)?;
    check_duplicates("product", &raw.products, |p| &p.id)?;
    check_duplicates("case", &case_records, |c| &c.id)?;

    let pc_ids: BTreeSet<&str> = raw.pcs.iter().map(|(p, _)| p.id.as_str()).collect();
    let sa_ids: BTreeSet<&str> = raw.sas.iter().map(|(s, _)| s.id.as_str()).collect();
    let product_ids: BTreeSet<&str> = raw.products.iter().map(|(p, _)| p.id.as_str()).collect();
    let dangling = |from: String, kind: &'static str, id: &str, location: &Location| {
        Error::from(IntegrityError::DanglingReference {
            from,
            kind,
            id: id.to_string(),
            location: Some(location.clone()),
        })
    };
    for (product, location) in &raw.products {
        if !pc_ids.contains(product.pc_id.as_str()) {
            return Err(dangling(format!("product `{}`", product.id), "pc", &product.pc_id, location));
        }
        if let Some(sa) = product.sa_values.keys().find(|k| !sa_ids.contains(k.as_str())) {
            return Err(dangling(format!("product `{}`", product.id), "sa", sa, location));
        }
    }
    for (case, location) in &case_records {
        if !product_ids.contains(case.product_id.as_str()) {
            return Err(dangling(format!("case `{}`", case.id), "product", &case.product_id, location));
        }
        if !sa_ids.contains(case.sa_id.as_str()) {
            return Err(dangling(format!("case `{}`", case.id), "sa", &case.sa_id, location));
        }
    }

    let unknown_fields = raw.unknown_fields;
    let mut catalog = Catalog::new(
        raw.pcs.into_iter().map(|(r, _)| r).collect(),
        raw.sas.into_iter().map(|(r, _)| r).collect(),
        raw.products.into_iter().map(|(r, _)| r).collect(),
        case_records.into_iter().map(|(r, _)| r).collect(),
    );
    catalog.unknown_fields = unknown_fields;
    log::info!("loaded {} from {}", catalog.counts(), path.display());
    Ok(catalog)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    EmptyCatalog,
    EmptyId,
    DuplicateId,
    MissingDefinition,
    DanglingReference,
    EmptyTitle,
    EmptyUnstructured,
    EmptyTestValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub subject: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    fn push(&mut self, kind: ViolationKind, subject: impl Into<String>, detail: impl Into<String>) {
        self.violations.push(Violation {
            kind,
            subject: subject.into(),
            detail: detail.into(),
        });
    }
}

/// Lists every rule violation in the catalog. Never fails.
pub fn validate_catalog(catalog: &Catalog) -> ValidationReport {
    use ViolationKind::*;
    let mut report = ValidationReport::default();
    if catalog.is_empty() {
        report.push(EmptyCatalog, "catalog", "no records");
        return report;
    }

    let mut check_ids = |kind: &str, ids: Vec<&str>| {
        let mut seen = BTreeSet::new();
        for id in ids {
            if id.trim().is_empty() {
                report.push(EmptyId, kind, format!("{kind} with empty id"));
            } else if !seen.insert(id) {
                report.push(DuplicateId, format!("{kind} `{id}`"), "id appears more than once");
            }
        }
    };
    check_ids("pc", catalog.pcs.iter().map(|p| p.id.as_str()).collect());
    check_ids("sa", catalog.sas.iter().map(|s| s.id.as_str()).collect());
    check_ids("product", catalog.products.iter().map(|p| p.id.as_str()).collect());
    check_ids("case", catalog.cases.iter().map(|c| c.id.as_str()).collect());

    for pc in &catalog.pcs {
        if pc.definition.trim().is_empty() {
            report.push(MissingDefinition, format!("pc `{}`", pc.id), "definition is empty");
        }
    }
    for sa in &catalog.sas {
        if sa.definition.trim().is_empty() {
            report.push(MissingDefinition, format!("sa `{}`", sa.id), "definition is empty");
        }
    }
    for product in &catalog.products {
        let subject = format!("product `{}`", product.id);
        if catalog.pc(&product.pc_id).is_none() {
            report.push(DanglingReference, &subject, format!("unknown pc `{}`", product.pc_id));
        }
        for sa in product.sa_values.keys() {
            if catalog.sa(sa).is_none() {
                report.push(DanglingReference, &subject, format!("unknown sa `{sa}`"));
            }
        }
        if product.title.trim().is_empty() {
            report.push(EmptyTitle, &subject, "title is empty");
        }
        if !product.has_unstructured_data() {
            report.push(EmptyUnstructured, &subject, "no title, description or bullets");
        }
    }
    for case in &catalog.cases {
        let subject = format!("case `{}`", case.id);
        if catalog.product(&case.product_id).is_none() {
            report.push(DanglingReference, &subject, format!("unknown product `{}`", case.product_id));
        }
        if catalog.sa(&case.sa_id).is_none() {
            report.push(DanglingReference, &subject, format!("unknown sa `{}`", case.sa_id));
        }
        if case.test_value.trim().is_empty() {
            report.push(EmptyTestValue, &subject, "test value is empty");
        }
    }
    report
}

/// Unique PC-SA pairs referenced by the labeled cases, sorted by PC then SA.
pub fn target_pairs(catalog: &Catalog) -> Vec<PairKey> {
    catalog
        .cases
        .iter()
        .filter_map(|case| catalog.case_pair(case))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"kind":"pc","id":"walking_stick","name":"Walking stick","definition":"A stick used as a walking aid."}
{"kind":"sa","id":"base_material","name":"base material","definition":"Material of the base.","value_kind":"text"}
{"kind":"product","id":"p1","pc_id":"walking_stick","title":"Wooden walking stick","description":"Huangtang wood","bullets":["rubber tip"],"sa_values":{"base_material":"rubber"}}
{"kind":"case","product_id":"p1","sa_id":"base_material","test_value":"rubber","task":"correctness","gold":"positive","language":"en"}
"#;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".jsonl").tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_minimal_catalog() {
        let f = write_tmp(MINIMAL);
        let catalog = load_catalog(f.path()).unwrap();
        let counts = catalog.counts();
        assert_eq!((counts.pcs, counts.sas, counts.products, counts.cases), (1, 1, 1, 1));
        assert_eq!(catalog.cases()[0].id, "case-00001");
        assert!(validate_catalog(&catalog).is_valid());
    }

    #[test]
    fn unknown_sa_reference_names_the_id() {
        let text = MINIMAL.replace(
            r#""sa_id":"base_material","test_value""#,
            r#""sa_id":"colour","test_value""#,
        );
        let f = write_tmp(&text);
        let err = load_catalog(f.path()).unwrap_err();
        match err {
            Error::Integrity(IntegrityError::DanglingReference { id, kind, location, .. }) => {
                assert_eq!(id, "colour");
                assert_eq!(kind, "sa");
                assert_eq!(location.unwrap().line, 4);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_pc_lists_both_lines() {
        let text = format!(
            "{MINIMAL}{}\n",
            r#"{"kind":"pc","id":"walking_stick","name":"again","definition":"dup"}"#
        );
        let f = write_tmp(&text);
        match load_catalog(f.path()).unwrap_err() {
            Error::Integrity(IntegrityError::DuplicateId { kind, id, locations }) => {
                assert_eq!(kind, "pc");
                assert_eq!(id, "walking_stick");
                let lines: Vec<usize> = locations.iter().map(|l| l.line).collect();
                assert_eq!(lines, vec![1, 5]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{MINIMAL}{{not json\n");
        let f = write_tmp(&text);
        match load_catalog(f.path()).unwrap_err() {
            Error::Parse { location, .. } => assert_eq!(location.line, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_counted() {
        let text = MINIMAL.replace(r#""name":"Walking stick","#, r#""name":"Walking stick","colour":"x","rank":3,"#);
        let f = write_tmp(&text);
        assert_eq!(load_catalog(f.path()).unwrap().unknown_fields(), 2);
    }

    #[test]
    fn empty_catalog_loads_but_is_flagged() {
        let f = write_tmp("");
        let catalog = load_catalog(f.path()).unwrap();
        assert!(catalog.is_empty());
        assert_eq!(validate_catalog(&catalog).count(ViolationKind::EmptyCatalog), 1);
    }

    #[test]
    fn directory_of_files_loads_in_name_order() {
        let dir = tempfile::tempdir().unwrap();
        let lines: Vec<&str> = MINIMAL.lines().collect();
        fs::write(dir.path().join("a.jsonl"), format!("{}\n{}\n", lines[0], lines[1])).unwrap();
        fs::write(dir.path().join("b.jsonl"), format!("{}\n{}\n", lines[2], lines[3])).unwrap();
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let catalog = load_catalog(dir.path()).unwrap();
        assert_eq!(catalog.counts().cases, 1);
    }

    #[test]
    fn missing_definition_is_one_violation() {
        let f = write_tmp(&MINIMAL.replace("A stick used as a walking aid.", ""));
        let report = validate_catalog(&load_catalog(f.path()).unwrap());
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].kind, ViolationKind::MissingDefinition);
    }

    #[test]
    fn empty_title_and_unknown_pc_are_two_violations() {
        let f = write_tmp(MINIMAL);
        let catalog = load_catalog(f.path()).unwrap();
        let mut products = catalog.products().to_vec();
        products[0].title.clear();
        products[0].pc_id = "umbrella".into();
        let broken = Catalog::new(
            catalog.pcs().to_vec(),
            catalog.sas().to_vec(),
            products,
            catalog.cases().to_vec(),
        );
        let report = validate_catalog(&broken);
        assert_eq!(report.violations.len(), 2, "{report:?}");
        assert_eq!(report.count(ViolationKind::EmptyTitle), 1);
        assert_eq!(report.count(ViolationKind::DanglingReference), 1);
    }

    fn case(product: &str, sa: &str) -> LabeledCase {
        LabeledCase {
            id: String::new(),
            product_id: product.into(),
            sa_id: sa.into(),
            test_value: "v".into(),
            task: Task::Correctness,
            gold: Gold::Positive,
            language: "en".into(),
        }
    }

    fn pair_catalog(cases: Vec<LabeledCase>) -> Catalog {
        let pcs = ["a", "b"]
            .iter()
            .map(|id| ProductCategory { id: id.to_string(), name: id.to_string(), definition: "d".into() })
            .collect();
        let sas = ["x", "y"]
            .iter()
            .map(|id| StructuredAttribute {
                id: id.to_string(),
                name: id.to_string(),
                definition: "d".into(),
                value_kind: ValueKind::Text,
            })
            .collect();
        let products = vec![
            Product { id: "pa".into(), pc_id: "a".into(), title: "t".into(), description: String::new(), bullets: vec![], sa_values: BTreeMap::new() },
            Product { id: "pb".into(), pc_id: "b".into(), title: "t".into(), description: String::new(), bullets: vec![], sa_values: BTreeMap::new() },
        ];
        Catalog::new(pcs, sas, products, cases)
    }

    #[test]
    fn target_pairs_deduplicates() {
        let catalog = pair_catalog(vec![case("pa", "x"), case("pa", "x"), case("pb", "y")]);
        assert_eq!(target_pairs(&catalog), vec![PairKey::new("a", "x"), PairKey::new("b", "y")]);
        assert!(target_pairs(&pair_catalog(vec![])).is_empty());
    }

    #[test]
    fn round_trip_is_stable() {
        let f = write_tmp(MINIMAL);
        let first = load_catalog(f.path()).unwrap();
        let out = tempfile::Builder::new().suffix(".jsonl").tempfile().unwrap();
        first.save(out.path()).unwrap();
        let second = load_catalog(out.path()).unwrap();
        assert_eq!(first, second);
    }
}
