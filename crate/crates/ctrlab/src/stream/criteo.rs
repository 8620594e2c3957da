//! Criteo-style conversion-log ingestion: tab-separated records with a click
//! timestamp, an optional conversion timestamp, integer features, and hashed
//! categorical tokens — plus the fake-negative dataset derivation used for
//! replay experiments.

use serde::{Deserialize, Serialize};

use super::{StreamError, StreamEvent};
use crate::features::FeatureLayout;
use crate::types::{SparseVector, TrainingExample};

/// Column layout of a conversion log: `click_time`, `conversion_time`, then
/// `integer_count` integer columns and `categorical_count` token columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriteoSchema {
    pub integer_count: usize,
    pub categorical_count: usize,
}

impl Default for CriteoSchema {
    /// The public conversion-logs layout: 8 integer and 9 categorical
    /// columns.
    fn default() -> Self {
        Self { integer_count: 8, categorical_count: 9 }
    }
}

impl CriteoSchema {
    pub fn column_count(&self) -> usize {
        2 + self.integer_count + self.categorical_count
    }
}

/// One parsed conversion-log record.
#[derive(Debug, Clone, PartialEq)]
pub struct CriteoRecord {
    /// Seconds.
    pub click_time: f64,
    /// Seconds; present iff the click converted. Never before `click_time`.
    pub conversion_time: Option<f64>,
    pub integer_features: Vec<Option<i64>>,
    pub categorical_features: Vec<Option<String>>,
}

/// Parses one line against a schema. Empty fields mean "absent".
pub fn parse_criteo_line(
    line: &str,
    schema: &CriteoSchema,
    line_no: usize,
) -> Result<CriteoRecord, StreamError> {
    let err = |msg: String| StreamError::Parse { line: line_no, msg };
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != schema.column_count() {
        return Err(err(format!(
            "expected {} columns, got {}",
            schema.column_count(),
            fields.len()
        )));
    }
    let click_time: f64 =
        fields[0].parse().map_err(|e| err(format!("bad click_time {:?}: {e}", fields[0])))?;
    let conversion_time = if fields[1].is_empty() {
        None
    } else {
        Some(
            fields[1]
                .parse::<f64>()
                .map_err(|e| err(format!("bad conversion_time {:?}: {e}", fields[1])))?,
        )
    };
    if let Some(ct) = conversion_time {
        if ct < click_time {
            return Err(err(format!("conversion_time {ct} before click_time {click_time}")));
        }
    }
    let mut integer_features = Vec::with_capacity(schema.integer_count);
    for raw in &fields[2..2 + schema.integer_count] {
        integer_features.push(if raw.is_empty() {
            None
        } else {
            Some(raw.parse::<i64>().map_err(|e| err(format!("bad integer {raw:?}: {e}")))?)
        });
    }
    let categorical_features = fields[2 + schema.integer_count..]
        .iter()
        .map(|raw| if raw.is_empty() { None } else { Some((*raw).to_string()) })
        .collect();
    Ok(CriteoRecord { click_time, conversion_time, integer_features, categorical_features })
}

/// Inverse of [`parse_criteo_line`] for records matching the same schema.
pub fn format_criteo_line(record: &CriteoRecord) -> String {
    let mut out = record.click_time.to_string();
    out.push('\t');
    if let Some(ct) = record.conversion_time {
        out.push_str(&ct.to_string());
    }
    for v in &record.integer_features {
        out.push('\t');
        if let Some(v) = v {
            out.push_str(&v.to_string());
        }
    }
    for t in &record.categorical_features {
        out.push('\t');
        if let Some(t) = t {
            out.push_str(t);
        }
    }
    out
}

/// Maps conversion-log records into the sparse feature space: integer
/// features land in per-field log2 bins, categorical tokens hash into
/// per-field blocks. Absent fields emit nothing.
#[derive(Debug, Clone)]
pub struct CriteoFeaturizer {
    schema: CriteoSchema,
    layout: FeatureLayout,
    int_bins: u32,
}

impl CriteoFeaturizer {
    pub fn new(schema: CriteoSchema, int_bins: u32, cat_bins: u32) -> Result<Self, StreamError> {
        if int_bins < 2 || cat_bins == 0 {
            return Err(StreamError::Config(
                "featurizer needs at least 2 integer bins and 1 categorical bin".into(),
            ));
        }
        let mut fields = Vec::with_capacity(schema.integer_count + schema.categorical_count);
        for i in 0..schema.integer_count {
            fields.push((format!("int_{i}"), int_bins));
        }
        for j in 0..schema.categorical_count {
            fields.push((format!("cat_{j}"), cat_bins));
        }
        let dim: usize = fields.iter().map(|(_, c)| *c as usize).sum();
        let layout = FeatureLayout::from_cardinalities(&fields, dim)
            .ok_or_else(|| StreamError::Config("featurizer layout does not fit".into()))?;
        Ok(Self { schema, layout, int_bins })
    }

    /// 32 integer bins, 4096 hash slots per categorical field.
    pub fn with_defaults(schema: CriteoSchema) -> Result<Self, StreamError> {
        Self::new(schema, 32, 4096)
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    /// Bin 0 holds negatives; bin 1 + floor(log2(v+1)) holds v >= 0, clamped
    /// to the last bin.
    fn int_bin(&self, v: i64) -> u32 {
        if v < 0 {
            return 0;
        }
        let magnitude = 63 - (v as u64 + 1).leading_zeros();
        (1 + magnitude).min(self.int_bins - 1)
    }

    pub fn featurize(&self, record: &CriteoRecord) -> Result<SparseVector, StreamError> {
        if record.integer_features.len() != self.schema.integer_count
            || record.categorical_features.len() != self.schema.categorical_count
        {
            return Err(StreamError::Data(format!(
                "record has {}/{} features, schema expects {}/{}",
                record.integer_features.len(),
                record.categorical_features.len(),
                self.schema.integer_count,
                self.schema.categorical_count
            )));
        }
        let mut entries = Vec::with_capacity(self.schema.integer_count + self.schema.categorical_count);
        for (i, v) in record.integer_features.iter().enumerate() {
            if let Some(v) = v {
                let block = self.layout.block(&format!("int_{i}")).expect("layout built from schema");
                entries.push((block.start + self.int_bin(*v), 1.0));
            }
        }
        for (j, t) in record.categorical_features.iter().enumerate() {
            if let Some(t) = t {
                let id = self
                    .layout
                    .feature_id(&format!("cat_{j}"), t)
                    .expect("layout built from schema");
                entries.push((id, 1.0));
            }
        }
        Ok(SparseVector::new(entries)?)
    }
}

/// Derives the fake-negative training stream from a conversion log: the
/// snapshot time is the latest conversion-or-click time in the log; every
/// record yields a negative at its click time, and converting records are
/// duplicated as positives at their conversion time with
/// time_to_click = conversion - click. Elapsed times are measured from click
/// to snapshot. Output is ordered by (emit_time, record index, label).
pub fn derive_criteo_fn_dataset(
    records: &[CriteoRecord],
    featurizer: &CriteoFeaturizer,
) -> Result<Vec<StreamEvent>, StreamError> {
    let snapshot_time = records
        .iter()
        .map(|r| r.conversion_time.unwrap_or(r.click_time))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut events = Vec::with_capacity(records.len() * 2);
    for (idx, record) in records.iter().enumerate() {
        let features = featurizer.featurize(record)?;
        let elapsed = snapshot_time - record.click_time;
        events.push(StreamEvent {
            emit_time: record.click_time,
            impression_id: idx as u64,
            example: TrainingExample {
                features: features.clone(),
                label: false,
                weight: 1.0,
                elapsed: Some(elapsed),
                time_to_click: None,
            },
        });
        if let Some(conversion_time) = record.conversion_time {
            if conversion_time < record.click_time {
                return Err(StreamError::Data(format!(
                    "record {idx}: conversion_time {conversion_time} before click_time {}",
                    record.click_time
                )));
            }
            // Zero-delay conversions are degenerate; nudge to the smallest
            // positive delay rather than dropping the example.
            let delay = (conversion_time - record.click_time).max(f64::MIN_POSITIVE);
            events.push(StreamEvent {
                emit_time: conversion_time,
                impression_id: idx as u64,
                example: TrainingExample {
                    features,
                    label: true,
                    weight: 1.0,
                    elapsed: Some(elapsed),
                    time_to_click: Some(delay),
                },
            });
        }
    }
    events.sort_by(|a, b| {
        a.emit_time
            .total_cmp(&b.emit_time)
            .then(a.impression_id.cmp(&b.impression_id))
            .then(a.example.label.cmp(&b.example.label))
    });
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_schema() -> CriteoSchema {
        CriteoSchema { integer_count: 2, categorical_count: 2 }
    }

    #[test]
    fn parse_examples() {
        let schema = small_schema();
        let r = parse_criteo_line("10\t\t5\t\tabc\t", &schema, 1).unwrap();
        assert_eq!(r.click_time, 10.0);
        assert_eq!(r.conversion_time, None);
        assert_eq!(r.integer_features, vec![Some(5), None]);
        assert_eq!(r.categorical_features, vec![Some("abc".to_string()), None]);

        let r = parse_criteo_line("10\t70\t1\t2\ta\tb", &schema, 1).unwrap();
        assert_eq!(r.conversion_time, Some(70.0));

        // Wrong column count.
        assert!(parse_criteo_line("10\t70\t1", &schema, 1).is_err());
        // Conversion before click.
        let err = parse_criteo_line("10\t5\t1\t2\ta\tb", &schema, 7).unwrap_err();
        assert!(matches!(err, StreamError::Parse { line: 7, .. }));
        // Bad integer.
        assert!(parse_criteo_line("10\t\tx\t2\ta\tb", &schema, 1).is_err());
    }

    #[test]
    fn format_parse_round_trip() {
        use rand::{Rng, SeedableRng};
        let schema = small_schema();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let click: f64 = rng.random_range(0.0..1e6);
            let record = CriteoRecord {
                click_time: click,
                conversion_time: if rng.random_bool(0.4) {
                    Some(click + rng.random_range(0.0..1e5))
                } else {
                    None
                },
                integer_features: (0..2)
                    .map(|_| rng.random_bool(0.8).then(|| rng.random_range(-10..100000)))
                    .collect(),
                categorical_features: (0..2)
                    .map(|_| rng.random_bool(0.8).then(|| format!("{:08x}", rng.random::<u32>())))
                    .collect(),
            };
            let line = format_criteo_line(&record);
            let back = parse_criteo_line(&line, &schema, 0).unwrap();
            assert_eq!(record, back);
        }
    }

    #[test]
    fn featurizer_bins_and_blocks() {
        let f = CriteoFeaturizer::new(small_schema(), 8, 16).unwrap();
        assert_eq!(f.layout().input_dim(), 2 * 8 + 2 * 16);

        // Negative -> bin 0, 0 -> bin 1, 1 -> bin 2, 100 -> capped by log2.
        assert_eq!(f.int_bin(-3), 0);
        assert_eq!(f.int_bin(0), 1);
        assert_eq!(f.int_bin(1), 2);
        assert_eq!(f.int_bin(2), 2);
        assert_eq!(f.int_bin(3), 3);
        assert_eq!(f.int_bin(i64::MAX), 7);

        let record = CriteoRecord {
            click_time: 0.0,
            conversion_time: None,
            integer_features: vec![Some(1), None],
            categorical_features: vec![None, Some("deadbeef".into())],
        };
        let x = f.featurize(&record).unwrap();
        assert_eq!(x.len(), 2);
        // int_0 block [0,8): bin 2.
        assert_eq!(x.entries()[0].0, 2);
        // cat_1 block [24, 40).
        assert!((24..40).contains(&x.entries()[1].0));

        // Same record featurizes identically.
        assert_eq!(f.featurize(&record).unwrap(), x);
    }

    #[test]
    fn derive_single_records() {
        let f = CriteoFeaturizer::new(small_schema(), 8, 16).unwrap();
        let only_click = parse_criteo_line("10\t\t1\t2\ta\tb", &small_schema(), 0).unwrap();
        let events = derive_criteo_fn_dataset(&[only_click], &f).unwrap();
        assert_eq!(events.len(), 1);
        assert!(!events[0].example.label);
        assert_eq!(events[0].emit_time, 10.0);
        assert_eq!(events[0].example.elapsed, Some(0.0));

        let converting = parse_criteo_line("10\t70\t1\t2\ta\tb", &small_schema(), 0).unwrap();
        let events = derive_criteo_fn_dataset(&[converting], &f).unwrap();
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].emit_time, 10.0);
        assert!(!events[0].example.label);
        assert_eq!(events[0].example.elapsed, Some(60.0));
        assert_eq!(events[1].emit_time, 70.0);
        assert!(events[1].example.label);
        assert_eq!(events[1].example.time_to_click, Some(60.0));
    }

    #[test]
    fn derive_counts_and_order() {
        let schema = small_schema();
        let f = CriteoFeaturizer::new(schema.clone(), 8, 16).unwrap();
        let lines = [
            "100\t\t1\t2\ta\tb",
            "50\t500\t3\t\tc\t",
            "200\t250\t\t4\t\td",
            "10\t\t5\t6\te\tf",
        ];
        let records: Vec<CriteoRecord> =
            lines.iter().map(|l| parse_criteo_line(l, &schema, 0).unwrap()).collect();
        let events = derive_criteo_fn_dataset(&records, &f).unwrap();
        let conversions = records.iter().filter(|r| r.conversion_time.is_some()).count();
        assert_eq!(events.len(), records.len() + conversions);
        assert!(events.windows(2).all(|w| w[0].emit_time <= w[1].emit_time));
        // Snapshot is the latest conversion-or-click time: 500.
        assert_eq!(events[0].example.elapsed, Some(490.0));
    }
}
