use super::{Dataset, Sample};
use crate::error::{Error, Result};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureColumns {
    /// Every column that is neither the label nor the group column.
    Remaining,
    Named(Vec<String>),
}

/// Maps CSV header names onto the label, group and feature roles.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub label: String,
    pub group: Option<String>,
    pub features: FeatureColumns,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            label: "label".into(),
            group: Some("group".into()),
            features: FeatureColumns::Remaining,
        }
    }
}

impl CsvSchema {
    pub fn without_groups() -> Self {
        Self {
            group: None,
            ..Self::default()
        }
    }
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file))
}

fn read_headers(reader: &mut csv::Reader<std::fs::File>, path: &Path) -> Result<Vec<String>> {
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Format(format!("{}: missing header row", path.display())));
    }
    Ok(headers.iter().map(|h| h.trim().to_string()).collect())
}

fn parse_binary(value: &str, row: usize, column: &str) -> Result<u8> {
    match value {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Parse {
            row,
            message: format!("column `{column}` value {other:?} is not 0 or 1"),
        }),
    }
}

/// Reads a dataset, preserving row order. Row indices in errors count data
/// rows from zero (the header is not counted).
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = open(path)?;
    let headers = read_headers(&mut reader, path)?;
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` not found in {}", path.display())))
    };

    let label_col = find(&schema.label)?;
    let group_col = schema.group.as_deref().map(find).transpose()?;
    let feature_cols: Vec<usize> = match &schema.features {
        FeatureColumns::Remaining => (0..headers.len())
            .filter(|&c| c != label_col && Some(c) != group_col)
            .collect(),
        FeatureColumns::Named(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
    };

    let dim = feature_cols.len();
    let mut samples = Vec::new();
    let mut groups = group_col.map(|_| Vec::new());
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("row {row}: {e}")))?;
        let label = parse_binary(record[label_col].trim(), row, &schema.label)?;
        if let (Some(col), Some(gs)) = (group_col, groups.as_mut()) {
            let name = schema.group.as_deref().unwrap_or("group");
            gs.push(parse_binary(record[col].trim(), row, name)?);
        }
        let features = feature_cols
            .iter()
            .map(|&c| {
                let raw = record[c].trim();
                raw.parse::<f64>().map_err(|_| Error::Parse {
                    row,
                    message: format!("column `{}` value {raw:?} is not a number", headers[c]),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        samples.push(Sample::new(features, label));
    }
    Dataset::new(dim, samples, groups)
}

/// Reads a dataset with `label` and, when the header has one, `group`
/// columns; all other columns are features.
pub fn load_csv_auto(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = open(path)?;
    let headers = read_headers(&mut reader, path)?;
    let schema = if headers.iter().any(|h| h == "group") {
        CsvSchema::default()
    } else {
        CsvSchema::without_groups()
    };
    load_csv(path, &schema)
}

/// Writes `x0..x{d-1},label[,group]`. Floats use the shortest representation
/// that parses back to the same value.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let wrap = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));

    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    if data.has_groups() {
        header.push("group".into());
    }
    w.write_record(&header).map_err(wrap)?;
    for (i, s) in data.samples().iter().enumerate() {
        let mut rec: Vec<String> = s.features.iter().map(|x| format!("{x:?}")).collect();
        rec.push(s.label.to_string());
        if let Some(g) = data.group(i) {
            rec.push(g.to_string());
        }
        w.write_record(&rec).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
