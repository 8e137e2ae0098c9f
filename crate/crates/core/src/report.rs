//! Before/after accounting of spatial area, slice count and their product,
//! per scan and per group.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slice_select::SliceWindow;
use crate::spatial::CropRect;
use crate::volume::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionRecord {
    pub scan_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    /// Pixels.
    pub spatial_before: f64,
    pub spatial_after: f64,
    pub slices_before: f64,
    pub slices_after: f64,
    /// Pixels x slices.
    pub product_before: f64,
    pub product_after: f64,
}

#[inline]
fn delta(before: f64, after: f64) -> f64 {
    if before > 0.0 {
        1.0 - after / before
    } else {
        0.0
    }
}

impl ReductionRecord {
    pub fn delta_spatial(&self) -> f64 {
        delta(self.spatial_before, self.spatial_after)
    }

    pub fn delta_slices(&self) -> f64 {
        delta(self.slices_before, self.slices_after)
    }

    pub fn delta_product(&self) -> f64 {
        delta(self.product_before, self.product_after)
    }

    /// Replaces the kept spatial area (e.g. the mean of per-slice crops) and
    /// recomputes the product column.
    pub fn with_spatial_after(mut self, area: f64) -> Self {
        self.spatial_after = area;
        self.product_after = area * self.slices_after;
        self
    }
}

pub fn record_scan(
    scan_id: &str,
    before_dims: (usize, usize),
    crop: &CropRect,
    window: &SliceWindow,
    n_slices: usize,
) -> ReductionRecord {
    let spatial_before = (before_dims.0 * before_dims.1) as f64;
    let spatial_after = crop.area() as f64;
    let slices_before = n_slices as f64;
    let slices_after = window.len() as f64;
    ReductionRecord {
        scan_id: scan_id.to_string(),
        label: None,
        split: None,
        spatial_before,
        spatial_after,
        slices_before,
        slices_after,
        product_before: spatial_before * slices_before,
        product_after: spatial_after * slices_after,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Total,
    Label,
    Split,
}

/// Running sums for one group. For integer-valued columns (pixel and
/// slice counts) merging shards reproduces the whole-set sums exactly; the
/// per-scan delta sums are subject to ordinary float rounding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Accumulator {
    pub count: u64,
    pub spatial_before: f64,
    pub spatial_after: f64,
    pub slices_before: f64,
    pub slices_after: f64,
    pub product_before: f64,
    pub product_after: f64,
    pub delta_spatial: f64,
    pub delta_slices: f64,
    pub delta_product: f64,
}

impl Accumulator {
    pub fn push(&mut self, r: &ReductionRecord) {
        self.count += 1;
        self.spatial_before += r.spatial_before;
        self.spatial_after += r.spatial_after;
        self.slices_before += r.slices_before;
        self.slices_after += r.slices_after;
        self.product_before += r.product_before;
        self.product_after += r.product_after;
        self.delta_spatial += r.delta_spatial();
        self.delta_slices += r.delta_slices();
        self.delta_product += r.delta_product();
    }

    pub fn merge(mut self, o: &Accumulator) -> Self {
        self.count += o.count;
        self.spatial_before += o.spatial_before;
        self.spatial_after += o.spatial_after;
        self.slices_before += o.slices_before;
        self.slices_after += o.slices_after;
        self.product_before += o.product_before;
        self.product_after += o.product_after;
        self.delta_spatial += o.delta_spatial;
        self.delta_slices += o.delta_slices;
        self.delta_product += o.delta_product;
        self
    }

    pub fn finish(&self, key: String) -> AggregateReport {
        let n = self.count as f64;
        let mean = |v: f64| v / n;
        let col = |before: f64, after: f64, sum_delta: f64| Column {
            before: mean(before),
            after: mean(after),
            delta: delta(mean(before), mean(after)),
            mean_delta: mean(sum_delta),
        };
        AggregateReport {
            key,
            count: self.count,
            spatial: col(self.spatial_before, self.spatial_after, self.delta_spatial),
            slices: col(self.slices_before, self.slices_after, self.delta_slices),
            product: col(self.product_before, self.product_after, self.delta_product),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub before: f64,
    pub after: f64,
    /// `1 - mean(after) / mean(before)`.
    pub delta: f64,
    /// Mean of per-scan deltas.
    pub mean_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub key: String,
    pub count: u64,
    pub spatial: Column,
    pub slices: Column,
    pub product: Column,
}

fn group_key(r: &ReductionRecord, by: GroupBy) -> String {
    match by {
        GroupBy::Total => "total".to_string(),
        GroupBy::Label => r.label.unwrap_or(Label::Unknown).to_string(),
        GroupBy::Split => r.split.clone().unwrap_or_else(|| "unsplit".to_string()),
    }
}

pub fn accumulate(records: &[ReductionRecord], by: GroupBy) -> BTreeMap<String, Accumulator> {
    let mut groups: BTreeMap<String, Accumulator> = BTreeMap::new();
    for r in records {
        groups.entry(group_key(r, by)).or_default().push(r);
    }
    groups
}

/// Group means, sorted by group key.
pub fn aggregate(records: &[ReductionRecord], by: GroupBy) -> Result<Vec<AggregateReport>> {
    if records.is_empty() {
        return Err(Error::EmptyInput("reduction records"));
    }
    Ok(accumulate(records, by)
        .into_iter()
        .map(|(k, acc)| acc.finish(k))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema: u32,
    pub records: Vec<ReductionRecord>,
    pub total: AggregateReport,
    pub by_label: Vec<AggregateReport>,
    pub by_split: Vec<AggregateReport>,
}

impl ReportFile {
    pub fn build(records: Vec<ReductionRecord>) -> Result<Self> {
        let total = aggregate(&records, GroupBy::Total)?.remove(0);
        let by_label = aggregate(&records, GroupBy::Label)?;
        let by_split = aggregate(&records, GroupBy::Split)?;
        Ok(Self {
            schema: 1,
            records,
            total,
            by_label,
            by_split,
        })
    }

    /// Aligned text table: spatial area in thousands of pixels, product in
    /// millions.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>6} | {:>9} {:>9} {:>7} | {:>8} {:>8} {:>7} | {:>9} {:>9} {:>7}",
            "", "scans", "Area(K)", "", "", "Slices", "", "", "Area*Sl(M)", "", ""
        );
        let _ = writeln!(
            out,
            "{:<16} {:>6} | {:>9} {:>9} {:>7} | {:>8} {:>8} {:>7} | {:>9} {:>9} {:>7}",
            "group", "", "before", "after", "delta", "before", "after", "delta", "before", "after", "delta"
        );
        let rule = "-".repeat(out.lines().last().map_or(0, str::len));
        let _ = writeln!(out, "{rule}");
        let mut row = |name: &str, g: &AggregateReport| {
            let _ = writeln!(
                out,
                "{:<16} {:>6} | {:>9.2} {:>9.2} {:>7.4} | {:>8.2} {:>8.2} {:>7.4} | {:>9.2} {:>9.2} {:>7.4}",
                name,
                g.count,
                g.spatial.before / 1e3,
                g.spatial.after / 1e3,
                g.spatial.delta,
                g.slices.before,
                g.slices.after,
                g.slices.delta,
                g.product.before / 1e6,
                g.product.after / 1e6,
                g.product.delta,
            );
        };
        for g in &self.by_split {
            row(&format!("split:{}", g.key), g);
        }
        for g in &self.by_label {
            row(&format!("label:{}", g.key), g);
        }
        row("Total", &self.total);
        out
    }
}
