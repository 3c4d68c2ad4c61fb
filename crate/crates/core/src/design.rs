//! Binary measurement matrices.
//!
//! Row `i` of a measurement matrix is one ablation configuration; a 1 in
//! column `j` means head `j` (flat index) is zeroed in that evaluation. Rows
//! are stored sparsely as sorted lists of ablated flat indices.
//!
//! Two constructions are provided:
//!
//! * **Bernoulli**: every entry is drawn independently with a fixed
//!   ablation probability.
//! * **Stratified**: every row ablates exactly `s` heads and every head is
//!   ablated either `floor(M*s/N)` or `ceil(M*s/N)` times.
//!
//! Both reject all-zero rows (they only re-measure the baseline) and redraw
//! duplicate rows up to [`MAX_DUPLICATE_REDRAWS`] times before accepting them
//! with a warning.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded, RNG_NAME};
use crate::space::ModelShape;

pub const MAX_DUPLICATE_REDRAWS: usize = 1000;
const MAX_FAILED_REPAIRS: usize = 100;
const FORMAT_TAG: &str = "headhunt-matrix";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignStrategy {
    Bernoulli,
    Stratified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignParams {
    Bernoulli {
        ablate_prob: f64,
    },
    Stratified {
        /// Heads ablated in every row (`s`).
        per_row: usize,
        /// `round(M * s / N)`.
        target_column_count: usize,
    },
    /// Rows supplied directly rather than sampled.
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementMatrix {
    n_heads: usize,
    rows: Vec<Vec<usize>>,
    strategy: Option<DesignStrategy>,
    params: DesignParams,
    seed: u64,
    rng: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

impl MeasurementMatrix {
    /// Builds a matrix from explicit rows. Indices are sorted and must be in
    /// range and unique within a row; empty rows are allowed here so that
    /// [`audit`] can flag them.
    pub fn from_rows(n_heads: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        if n_heads == 0 {
            return Err(Error::Config("matrix needs at least one column".into()));
        }
        let mut clean = Vec::with_capacity(rows.len());
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_unstable();
            if row.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Input(format!("row {i} repeats a column")));
            }
            if let Some(&last) = row.last() {
                if last >= n_heads {
                    return Err(Error::FlatOutOfBounds {
                        index: last,
                        n_heads,
                    });
                }
            }
            clean.push(row);
        }
        Ok(Self {
            n_heads,
            rows: clean,
            strategy: None,
            params: DesignParams::Explicit,
            seed: 0,
            rng: String::new(),
            warnings: Vec::new(),
        })
    }

    /// Builds a matrix from a dense 0/1 table. Any entry other than 0 or 1 is
    /// an input error.
    pub fn from_dense(dense: &[Vec<u8>]) -> Result<Self> {
        let n_heads = dense.first().map_or(0, Vec::len);
        let mut rows = Vec::with_capacity(dense.len());
        for (i, r) in dense.iter().enumerate() {
            if r.len() != n_heads {
                return Err(Error::Input(format!("row {i} has {} columns, expected {n_heads}", r.len())));
            }
            let mut row = Vec::new();
            for (j, &v) in r.iter().enumerate() {
                match v {
                    0 => {}
                    1 => row.push(j),
                    _ => return Err(Error::Input(format!("entry ({i}, {j}) is {v}, not binary"))),
                }
            }
            rows.push(row);
        }
        Self::from_rows(n_heads, rows)
    }

    pub fn n_measurements(&self) -> usize {
        self.rows.len()
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn strategy(&self) -> Option<DesignStrategy> {
        self.strategy
    }

    pub fn params(&self) -> DesignParams {
        self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng_name(&self) -> &str {
        &self.rng
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.rows[i].binary_search(&j).is_ok()
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        self.rows
            .iter()
            .map(|r| {
                let mut d = vec![0u8; self.n_heads];
                for &j in r {
                    d[j] = 1;
                }
                d
            })
            .collect()
    }

    /// Row indices holding a 1, per column.
    pub fn columns(&self) -> Vec<Vec<usize>> {
        let mut cols = vec![Vec::new(); self.n_heads];
        for (i, r) in self.rows.iter().enumerate() {
            for &j in r {
                cols[j].push(i);
            }
        }
        cols
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.rows.iter().map(Vec::len).collect()
    }

    pub fn column_sums(&self) -> Vec<usize> {
        let mut sums = vec![0; self.n_heads];
        for r in &self.rows {
            for &j in r {
                sums[j] += 1;
            }
        }
        sums
    }

    pub fn density(&self) -> f64 {
        let total: usize = self.rows.iter().map(Vec::len).sum();
        total as f64 / (self.rows.len() * self.n_heads).max(1) as f64
    }

    /// Keeps only the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            ..self.clone()
        }
    }

    /// Writes the sparse line format: one header object, then one JSON array
    /// of ablated flat indices per row.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = MatrixHeader {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            strategy: self.strategy,
            params: self.params,
            seed: self.seed,
            rng: self.rng.clone(),
            n_measurements: self.rows.len(),
            n_heads: self.n_heads,
            warnings: self.warnings.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for r in &self.rows {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Input("empty matrix file".into()))??;
        let header: MatrixHeader = serde_json::from_str(&header_line)?;
        if header.format != FORMAT_TAG || header.version != FORMAT_VERSION {
            return Err(Error::Input(format!(
                "unsupported matrix format {} v{}",
                header.format, header.version
            )));
        }
        let mut rows = Vec::with_capacity(header.n_measurements);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            rows.push(serde_json::from_str::<Vec<usize>>(&line)?);
        }
        if rows.len() != header.n_measurements {
            return Err(Error::Input(format!(
                "header declares {} rows, found {}",
                header.n_measurements,
                rows.len()
            )));
        }
        let mut m = Self::from_rows(header.n_heads, rows)?;
        m.strategy = header.strategy;
        m.params = header.params;
        m.seed = header.seed;
        m.rng = header.rng;
        m.warnings = header.warnings;
        Ok(m)
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixHeader {
    format: String,
    version: u32,
    strategy: Option<DesignStrategy>,
    params: DesignParams,
    seed: u64,
    rng: String,
    n_measurements: usize,
    n_heads: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

/// Samples every entry i.i.d. with `P(1) = ablate_prob`.
pub fn construct_bernoulli(
    shape: ModelShape,
    n_measurements: usize,
    ablate_prob: f64,
    seed: u64,
) -> Result<MeasurementMatrix> {
    if !(ablate_prob > 0.0 && ablate_prob < 1.0) {
        return Err(Error::Config(format!(
            "ablation probability must lie in (0, 1), got {ablate_prob}"
        )));
    }
    if n_measurements == 0 {
        return Err(Error::Config("need at least one measurement".into()));
    }
    let n = shape.n_heads();
    let mut rng = seeded(seed);
    let mut rows: Vec<Vec<usize>> = Vec::with_capacity(n_measurements);
    let mut seen: HashSet<Vec<usize>> = HashSet::with_capacity(n_measurements);
    let mut warnings = Vec::new();
    for i in 0..n_measurements {
        let mut redraws = 0;
        let row = loop {
            let row: Vec<usize> = (0..n).filter(|_| rng.random_bool(ablate_prob)).collect();
            if row.is_empty() {
                continue;
            }
            if seen.contains(&row) {
                if redraws < MAX_DUPLICATE_REDRAWS {
                    redraws += 1;
                    continue;
                }
                warnings.push(format!(
                    "row {i} duplicates an earlier row after {MAX_DUPLICATE_REDRAWS} redraws"
                ));
            }
            break row;
        };
        seen.insert(row.clone());
        rows.push(row);
    }
    Ok(MeasurementMatrix {
        n_heads: n,
        rows,
        strategy: Some(DesignStrategy::Bernoulli),
        params: DesignParams::Bernoulli { ablate_prob },
        seed,
        rng: RNG_NAME.into(),
        warnings,
    })
}

/// Heads ablated per row for a sparsity fraction: `ceil(sparsity * N)`.
///
/// Rounding up means `M = 1 / sparsity` rows always cover every head, so
/// 100 rows at sparsity 0.01 cover a 1024-head model.
pub fn per_row_for_sparsity(n_heads: usize, sparsity: f64) -> Result<usize> {
    if !(sparsity > 0.0 && sparsity < 1.0) {
        return Err(Error::Config(format!(
            "sparsity must lie in (0, 1), got {sparsity}"
        )));
    }
    let s = (sparsity * n_heads as f64 - 1e-9).ceil() as usize;
    Ok(s.clamp(1, n_heads))
}

/// Balanced construction with `ceil(sparsity * N)` ablations per row.
pub fn construct_stratified(
    shape: ModelShape,
    n_measurements: usize,
    sparsity: f64,
    seed: u64,
) -> Result<MeasurementMatrix> {
    let per_row = per_row_for_sparsity(shape.n_heads(), sparsity)?;
    construct_stratified_per_row(shape, n_measurements, per_row, seed)
}

/// Balanced construction with an explicit per-row ablation count.
///
/// A multiset holding every head `floor(M*s/N)` times, plus one extra copy for
/// a random subset of heads, is shuffled and dealt into `M` rows of `s`.
/// Repeated heads within a row are repaired by swapping with a
/// non-conflicting element of another row; after too many failed repairs the
/// whole multiset is reshuffled.
pub fn construct_stratified_per_row(
    shape: ModelShape,
    n_measurements: usize,
    per_row: usize,
    seed: u64,
) -> Result<MeasurementMatrix> {
    let n = shape.n_heads();
    if n_measurements == 0 {
        return Err(Error::Config("need at least one measurement".into()));
    }
    if per_row == 0 || per_row > n {
        return Err(Error::Config(format!(
            "per-row ablation count must lie in [1, {n}], got {per_row}"
        )));
    }
    let total = n_measurements * per_row;
    if total < n {
        return Err(Error::Coverage {
            n_measurements,
            per_row,
            n_heads: n,
            min_measurements: n.div_ceil(per_row),
        });
    }
    let mut rng = seeded(seed);
    let mut warnings = Vec::new();
    let distinct_rows_possible = binomial_at_least(n, per_row, n_measurements);
    let mut attempts = 0;
    let rows = loop {
        attempts += 1;
        let rows = deal_balanced(n, n_measurements, per_row, &mut rng);
        if !distinct_rows_possible {
            warnings.push(format!(
                "only C({n}, {per_row}) < {n_measurements} distinct rows exist; duplicates accepted"
            ));
            break rows;
        }
        let unique: HashSet<&Vec<usize>> = rows.iter().collect();
        if unique.len() == rows.len() {
            break rows;
        }
        if attempts > MAX_DUPLICATE_REDRAWS {
            warnings.push(format!(
                "duplicate rows remain after {MAX_DUPLICATE_REDRAWS} reshuffles"
            ));
            break rows;
        }
    };
    Ok(MeasurementMatrix {
        n_heads: n,
        rows,
        strategy: Some(DesignStrategy::Stratified),
        params: DesignParams::Stratified {
            per_row,
            target_column_count: (total as f64 / n as f64).round() as usize,
        },
        seed,
        rng: RNG_NAME.into(),
        warnings,
    })
}

fn deal_balanced<R: Rng>(n: usize, m: usize, s: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let total = m * s;
    let base = total / n;
    let extra = total - base * n;
    loop {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut pool: Vec<usize> = Vec::with_capacity(total);
        for (rank, &head) in order.iter().enumerate() {
            let copies = base + usize::from(rank < extra);
            pool.extend(std::iter::repeat_n(head, copies));
        }
        pool.shuffle(rng);
        let mut rows: Vec<Vec<usize>> = pool.chunks(s).map(<[usize]>::to_vec).collect();
        if repair_rows(&mut rows) {
            for r in &mut rows {
                r.sort_unstable();
            }
            return rows;
        }
    }
}

/// Removes repeated heads within rows by cross-row swaps. Returns false once
/// the failed-repair budget is exhausted.
fn repair_rows(rows: &mut [Vec<usize>]) -> bool {
    let m = rows.len();
    let mut failures = 0;
    loop {
        let mut clean = true;
        for i in 0..m {
            for p in 0..rows[i].len() {
                let v = rows[i][p];
                if !rows[i][..p].contains(&v) {
                    continue;
                }
                if !swap_out(rows, i, p) {
                    clean = false;
                    failures += 1;
                    if failures > MAX_FAILED_REPAIRS {
                        return false;
                    }
                }
            }
        }
        if clean {
            return true;
        }
    }
}

/// Swaps `rows[i][p]` with an element of another row (later rows first) such
/// that neither row ends up with a repeat.
fn swap_out(rows: &mut [Vec<usize>], i: usize, p: usize) -> bool {
    let m = rows.len();
    let v = rows[i][p];
    for off in 1..m {
        let j = (i + off) % m;
        if rows[j].contains(&v) {
            continue;
        }
        if let Some(q) = (0..rows[j].len()).find(|&q| !rows[i].contains(&rows[j][q])) {
            rows[i][p] = rows[j][q];
            rows[j][q] = v;
            return true;
        }
    }
    false
}

/// Whether `C(n, k) >= target`, without overflow.
fn binomial_at_least(n: usize, k: usize, target: usize) -> bool {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc >= target as u128 {
            return true;
        }
    }
    acc >= target as u128
}

/// Exact statistics of a matrix and any violated construction invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixAudit {
    pub n_measurements: usize,
    pub n_heads: usize,
    pub row_sums: Vec<usize>,
    pub column_sums: Vec<usize>,
    pub density: f64,
    pub min_column: usize,
    pub max_column: usize,
    pub column_variance: f64,
    pub uncovered_columns: usize,
    pub empty_rows: usize,
    pub duplicate_rows: usize,
    pub violations: Vec<String>,
}

impl MatrixAudit {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn audit(matrix: &MeasurementMatrix) -> MatrixAudit {
    let row_sums = matrix.row_sums();
    let column_sums = matrix.column_sums();
    let min_column = column_sums.iter().copied().min().unwrap_or(0);
    let max_column = column_sums.iter().copied().max().unwrap_or(0);
    let n = column_sums.len().max(1) as f64;
    let mean = column_sums.iter().sum::<usize>() as f64 / n;
    let column_variance = column_sums
        .iter()
        .map(|&c| (c as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let empty_rows = row_sums.iter().filter(|&&s| s == 0).count();
    let unique: HashSet<&Vec<usize>> = matrix.rows.iter().collect();
    let duplicate_rows = matrix.rows.len() - unique.len();

    let mut violations = Vec::new();
    if matrix.rows.is_empty() {
        violations.push("matrix has no rows".to_string());
    }
    if empty_rows > 0 {
        violations.push(format!("{empty_rows} all-zero row(s) only re-measure the baseline"));
    }
    if duplicate_rows > 0 && matrix.warnings.is_empty() {
        violations.push(format!("{duplicate_rows} duplicate row(s)"));
    }
    if let DesignParams::Stratified { per_row, .. } = matrix.params {
        if let Some(i) = row_sums.iter().position(|&s| s != per_row) {
            violations.push(format!(
                "row {i} ablates {} heads, expected {per_row}",
                row_sums[i]
            ));
        }
        if max_column - min_column > 1 {
            violations.push(format!(
                "column counts span [{min_column}, {max_column}], expected a spread of at most 1"
            ));
        }
    }
    MatrixAudit {
        n_measurements: matrix.n_measurements(),
        n_heads: matrix.n_heads(),
        density: matrix.density(),
        min_column,
        max_column,
        column_variance,
        uncovered_columns: column_sums.iter().filter(|&&c| c == 0).count(),
        empty_rows,
        duplicate_rows,
        row_sums,
        column_sums,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn shape(l: usize, h: usize) -> ModelShape {
        ModelShape::new(l, h).unwrap()
    }

    #[test]
    fn bernoulli_is_deterministic_and_has_no_empty_rows() {
        let s = shape(16, 32);
        let a = construct_bernoulli(s, 100, 0.01, 7).unwrap();
        let b = construct_bernoulli(s, 100, 0.01, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.rows().iter().all(|r| !r.is_empty()));
        assert_ne!(a, construct_bernoulli(s, 100, 0.01, 8).unwrap());

        // Nearly-zero probability still yields a non-empty row every time.
        let tiny = construct_bernoulli(shape(2, 4), 5, 1e-3, 1).unwrap();
        assert!(tiny.rows().iter().all(|r| !r.is_empty()));
    }

    #[test]
    fn bernoulli_density_concentrates() {
        // N=512, M=100, p=0.01: binomial(51200, 0.01) has sd ~0.00044 in density.
        let s = shape(16, 32);
        let hits = (0..1000u64)
            .filter(|&seed| {
                let d = construct_bernoulli(s, 100, 0.01, seed).unwrap().density();
                (0.005..=0.015).contains(&d)
            })
            .count();
        assert!(hits >= 990, "{hits}");
    }

    #[test]
    fn bernoulli_rejects_bad_probability() {
        assert!(construct_bernoulli(shape(2, 2), 4, 0.0, 0).is_err());
        assert!(construct_bernoulli(shape(2, 2), 4, 1.0, 0).is_err());
        assert!(construct_bernoulli(shape(2, 2), 0, 0.5, 0).is_err());
    }

    #[test]
    fn stratified_exact_cover() {
        for seed in 0..20 {
            let m = construct_stratified_per_row(shape(2, 4), 4, 2, seed).unwrap();
            assert!(m.column_sums().iter().all(|&c| c == 1));
            assert!(m.row_sums().iter().all(|&c| c == 2));
        }
    }

    #[test]
    fn stratified_coverage_error_reports_minimum() {
        let err = construct_stratified_per_row(shape(16, 32), 100, 5, 0).unwrap_err();
        match err {
            Error::Coverage {
                min_measurements, ..
            } => assert_eq!(min_measurements, 103),
            other => panic!("{other:?}"),
        }
        assert!(err_msg_mentions_min(construct_stratified_per_row(shape(16, 32), 100, 5, 0)));
    }

    fn err_msg_mentions_min(r: Result<MeasurementMatrix>) -> bool {
        r.unwrap_err().to_string().contains("at least 103")
    }

    #[test]
    fn stratified_pigeonhole_counts() {
        // 550 ablations over 512 heads: every head once, 38 of them twice.
        let m = construct_stratified_per_row(shape(16, 32), 110, 5, 3).unwrap();
        let cols = m.column_sums();
        assert!(cols.iter().all(|&c| c == 1 || c == 2));
        assert_eq!(cols.iter().filter(|&&c| c == 2).count(), 38);
        assert!(audit(&m).is_clean());
    }

    #[test]
    fn sparsity_maps_to_per_row_count() {
        assert_eq!(per_row_for_sparsity(1024, 0.01).unwrap(), 11);
        assert_eq!(per_row_for_sparsity(512, 0.01).unwrap(), 6);
        assert_eq!(per_row_for_sparsity(1000, 0.01).unwrap(), 10);
        assert_eq!(per_row_for_sparsity(8, 0.01).unwrap(), 1);
        assert!(per_row_for_sparsity(8, 0.0).is_err());
    }

    #[test]
    fn default_search_grid_designs_are_clean() {
        let s = ModelShape::llama_8b();
        for m in [100, 200, 400] {
            for sp in [0.01, 0.02, 0.05, 0.1] {
                let mat = construct_stratified(s, m, sp, 11).unwrap();
                assert!(audit(&mat).is_clean(), "M={m} sparsity={sp}");
            }
        }
    }

    #[test]
    fn saturated_design_accepts_duplicates_with_warning() {
        let m = construct_stratified_per_row(shape(1, 4), 8, 1, 0).unwrap();
        assert!(!m.warnings().is_empty());
        let a = audit(&m);
        assert_eq!(a.duplicate_rows, 4);
        assert!(a.is_clean());
    }

    #[test]
    fn audit_flags_zero_matrix() {
        let m = MeasurementMatrix::from_dense(&[vec![0, 0], vec![0, 0]]).unwrap();
        let a = audit(&m);
        assert!(!a.is_clean());
        assert_eq!(a.empty_rows, 2);
        assert!(MeasurementMatrix::from_dense(&[vec![0, 2]]).is_err());
    }

    #[test]
    fn audit_flags_unbalanced_stratified() {
        let mut m = construct_stratified_per_row(shape(2, 4), 4, 2, 0).unwrap();
        m.rows[0] = vec![0, 1, 2];
        let a = audit(&m);
        assert!(a.violations.iter().any(|v| v.contains("row 0")));
    }

    #[test]
    fn bernoulli_audit_density_window() {
        let s = ModelShape::llama_8b();
        let ok = (0..200u64)
            .filter(|&seed| {
                let d = audit(&construct_bernoulli(s, 200, 0.05, seed).unwrap()).density;
                (0.04..=0.06).contains(&d)
            })
            .count();
        assert!(ok >= 198, "{ok}");
    }

    #[test]
    fn jsonl_header_then_rows() {
        let m = construct_stratified_per_row(shape(2, 4), 4, 2, 5).unwrap();
        let mut buf = Vec::new();
        m.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().next().unwrap().contains("\"strategy\":\"stratified\""));
        let back = MeasurementMatrix::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn stratified_invariants(l in 1usize..6, h in 1usize..12, s in 1usize..6, extra in 0usize..20, seed in any::<u64>()) {
            let shape = ModelShape::new(l, h).unwrap();
            let n = shape.n_heads();
            let s = s.min(n);
            let m = n.div_ceil(s) + extra;
            let mat = construct_stratified_per_row(shape, m, s, seed).unwrap();
            prop_assert!(mat.row_sums().iter().all(|&r| r == s));
            let a = audit(&mat);
            prop_assert!(a.max_column - a.min_column <= 1);
            let lo = m * s / n;
            prop_assert!(a.column_sums.iter().all(|&c| c == lo || c == lo + 1));
            prop_assert_eq!(mat.clone(), construct_stratified_per_row(shape, m, s, seed).unwrap());
        }

        #[test]
        fn jsonl_round_trip(l in 1usize..5, h in 1usize..9, m in 1usize..30, p in 0.05f64..0.9, seed in any::<u64>()) {
            let mat = construct_bernoulli(ModelShape::new(l, h).unwrap(), m, p, seed).unwrap();
            let mut buf = Vec::new();
            mat.write_jsonl(&mut buf).unwrap();
            prop_assert_eq!(MeasurementMatrix::read_jsonl(&buf[..]).unwrap(), mat);
        }
    }
}
