use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, Serializer};
use serde_json::{json, Value};

use super::HarnessError;

pub const CSV_HEADER: [&str; 10] = [
    "model",
    "M",
    "n",
    "reps",
    "weighted_sup_rmse",
    "bound",
    "mean_abs_bias",
    "sampler_calls",
    "wall_ms",
    "stream_version",
];

/// Ground truth the rmse column was measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// Exact fixed point of a finite model.
    Exact,
    /// Average of higher-level estimates of the same scheme.
    #[serde(rename = "self")]
    SelfReference,
}

/// One experiment row: all replications at one level `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub m: u64,
    pub n: u32,
    pub reps: usize,
    pub weighted_sup_rmse: f64,
    /// `γαⁿ`; NaN when the model has no convergent constants.
    pub bound: f64,
    /// NaN without exact ground truth.
    pub mean_abs_bias: f64,
    /// Sampler calls of one estimator evaluation.
    pub sampler_calls: u128,
    pub wall_ms: f64,
    pub stream_version: String,
    /// Not part of the CSV layout; `None` for rows read back from CSV.
    pub reference: Option<Reference>,
}

/// 17 significant digits, so values parse back bit-exactly. Positional
/// notation for magnitudes in `[1e-5, 1e16)`, scientific otherwise.
pub fn format_float(x: f64) -> String {
    let sci = format!("{x:.16e}");
    if !x.is_finite() || x == 0.0 {
        return if x == 0.0 { format!("{x:.1}") } else { sci };
    }
    let exponent: i32 = sci.rsplit('e').next().and_then(|e| e.parse().ok()).unwrap_or(0);
    if (-5..16).contains(&exponent) {
        format!("{x:.*}", (16 - exponent) as usize)
    } else {
        sci
    }
}

fn parse_float(field: &str) -> Result<f64, String> {
    field.parse().map_err(|e| format!("invalid number `{field}`: {e}"))
}

impl ReportRow {
    fn csv_record(&self) -> [String; 10] {
        [
            self.model.clone(),
            self.m.to_string(),
            self.n.to_string(),
            self.reps.to_string(),
            format_float(self.weighted_sup_rmse),
            format_float(self.bound),
            format_float(self.mean_abs_bias),
            self.sampler_calls.to_string(),
            format_float(self.wall_ms),
            self.stream_version.clone(),
        ]
    }

    fn from_record(record: &csv::StringRecord) -> Result<Self, String> {
        if record.len() != CSV_HEADER.len() {
            return Err(format!("expected {} fields, got {}", CSV_HEADER.len(), record.len()));
        }
        let int = |i: usize| -> Result<u128, String> {
            record[i]
                .parse()
                .map_err(|e| format!("invalid integer `{}`: {e}", &record[i]))
        };
        let small = |i: usize| -> Result<u64, String> { u64::try_from(int(i)?).map_err(|e| e.to_string()) };
        Ok(Self {
            model: record[0].to_string(),
            m: small(1)?,
            n: u32::try_from(small(2)?).map_err(|e| e.to_string())?,
            reps: usize::try_from(small(3)?).map_err(|e| e.to_string())?,
            weighted_sup_rmse: parse_float(&record[4])?,
            bound: parse_float(&record[5])?,
            mean_abs_bias: parse_float(&record[6])?,
            sampler_calls: int(7)?,
            wall_ms: parse_float(&record[8])?,
            stream_version: record[9].to_string(),
            reference: None,
        })
    }

    pub fn to_json(&self) -> Value {
        let mut v = json!({
            "model": self.model,
            "M": self.m,
            "n": self.n,
            "reps": self.reps,
            "weighted_sup_rmse": self.weighted_sup_rmse,
            "bound": self.bound,
            "mean_abs_bias": self.mean_abs_bias,
            "sampler_calls": self.sampler_calls.to_string(),
            "wall_ms": self.wall_ms,
            "stream_version": self.stream_version,
        });
        if let Some(reference) = self.reference {
            v["reference"] = serde_json::to_value(reference).expect("unit enum");
        }
        v
    }
}

/// Write rows as CSV with the fixed header.
pub fn write_csv<W: Write>(rows: &[ReportRow], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.write_record(row.csv_record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(rows: &[ReportRow], path: &Path) -> Result<(), HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::Config("no rows to write".into()));
    }
    let file = File::create(path).map_err(|source| HarnessError::Io {
        path: path.into(),
        source,
    })?;
    write_csv(rows, file).map_err(|e| HarnessError::Io {
        path: path.into(),
        source: io::Error::other(e),
    })
}

pub fn parse_csv<R: io::Read>(reader: R) -> Result<Vec<ReportRow>, String> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers().map_err(|e| e.to_string())?;
    if header.iter().ne(CSV_HEADER) {
        return Err(format!(
            "unexpected header `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        ));
    }
    let mut rows = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(|e| e.to_string())?;
        rows.push(ReportRow::from_record(&record).map_err(|e| format!("row {}: {e}", i + 1))?);
    }
    Ok(rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<ReportRow>, HarnessError> {
    let file = File::open(path).map_err(|source| HarnessError::Io {
        path: path.into(),
        source,
    })?;
    parse_csv(file).map_err(|message| HarnessError::Parse {
        path: path.into(),
        message,
    })
}

pub fn emit_json(rows: &[ReportRow], path: &Path) -> Result<(), HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::Config("no rows to write".into()));
    }
    let value = Value::Array(rows.iter().map(ReportRow::to_json).collect());
    let mut text = to_json_string(&value);
    text.push('\n');
    std::fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.into(),
        source,
    })
}

/// JSON formatter writing every float with 17 significant digits.
#[derive(Debug, Default, Clone, Copy)]
pub struct PreciseFormatter;

impl Formatter for PreciseFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_float(value).as_bytes())
    }
}

/// Compact JSON with lexicographically sorted keys and 17-digit floats.
/// Non-finite floats are written as `null`.
pub fn to_json_string(value: &Value) -> String {
    let mut out = Vec::new();
    let mut ser = Serializer::with_formatter(&mut out, PreciseFormatter);
    value.serialize(&mut ser).expect("in-memory JSON serialization");
    String::from_utf8(out).expect("JSON is UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn row(n: u32) -> ReportRow {
        ReportRow {
            model: "chain_finite".into(),
            m: 4,
            n,
            reps: 500,
            weighted_sup_rmse: 0.1 + f64::EPSILON * n as f64,
            bound: 2.5 * 0.7653311931459037f64.powi(n as i32),
            mean_abs_bias: 1.0 / 3.0,
            sampler_calls: 616,
            wall_ms: 0.0,
            stream_version: crate::STREAM_ALGORITHM_VERSION.into(),
            reference: None,
        }
    }

    #[test]
    fn single_row_csv_has_two_lines() {
        let mut out = Vec::new();
        write_csv(&[row(3)], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            "model,M,n,reps,weighted_sup_rmse,bound,mean_abs_bias,sampler_calls,wall_ms,stream_version"
        );
        assert!(lines[1].starts_with("chain_finite,4,3,500,"));
        assert!(lines[1].contains(",616,"));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let mut rows: Vec<_> = (1..=6).map(row).collect();
        rows[2].mean_abs_bias = f64::NAN;
        rows[3].weighted_sup_rmse = 5e-324;
        rows[4].bound = 1.0 / 7.0;
        let mut out = Vec::new();
        write_csv(&rows, &mut out).unwrap();
        let back = parse_csv(out.as_slice()).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            for (x, y) in [
                (a.weighted_sup_rmse, b.weighted_sup_rmse),
                (a.bound, b.bound),
                (a.mean_abs_bias, b.mean_abs_bias),
                (a.wall_ms, b.wall_ms),
            ] {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            assert_eq!((a.m, a.n, a.reps, a.sampler_calls), (b.m, b.n, b.reps, b.sampler_calls));
        }
    }

    #[test]
    fn float_format_keeps_seventeen_digits() {
        assert_eq!(format_float(0.7653311931459037), "0.76533119314590370");
        assert_eq!(format_float(2.5), "2.5000000000000000");
        assert_eq!(format_float(0.0), "0.0");
        assert_eq!(format_float(187508.0), "187508.00000000000");
        assert_eq!(format_float(5e-324), "4.9406564584124654e-324");
        for x in [
            1e-5,
            9.999999999999999e-6,
            1e16,
            123456789.123,
            -0.1,
            f64::MAX,
            f64::MIN_POSITIVE,
        ] {
            assert_eq!(format_float(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn rejects_wrong_header() {
        assert!(parse_csv("model,M\nx,1\n".as_bytes()).is_err());
    }

    #[test]
    fn json_keys_are_sorted_and_floats_precise() {
        let mut r = row(1);
        r.reference = Some(Reference::SelfReference);
        let text = to_json_string(&r.to_json());
        let keys = [
            "\"M\"",
            "\"bound\"",
            "\"mean_abs_bias\"",
            "\"model\"",
            "\"n\"",
            "\"reference\"",
            "\"reps\"",
        ];
        let positions: Vec<_> = keys.iter().map(|k| text.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert!(text.contains("\"reference\":\"self\""));
        assert!(text.contains("0.33333333333333331"));
    }

    #[test]
    fn emit_requires_rows_and_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_csv(&[], &dir.path().join("a.csv")).is_err());
        let missing = dir.path().join("missing").join("a.csv");
        let err = emit_csv(&[row(1)], &missing).unwrap_err();
        assert!(err.to_string().contains("missing"));
        let json = dir.path().join("rows.json");
        emit_json(&[row(1), row(2)], &json).unwrap();
        let v: Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 2);
    }
}
