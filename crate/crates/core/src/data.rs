//! Matrix containers, standardization and the on-disk formats for designs,
//! summary statistics, annotations and LD matrices.
//!
//! Text files are tab-separated with a header row. LD matrices can also be
//! stored as raw little-endian binary: the magic `LDMX`, a `u32` dimension
//! and `p²` row-major `f64` values.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

pub const LD_MAGIC: &[u8; 4] = b"LDMX";

/// Column-standardized matrix (zero mean, unit `n - 1` standard deviation)
/// that remembers the original location and scale of every column.
#[derive(Clone, Debug)]
pub struct StandardizedMatrix {
    values: DMatrix<f64>,
    col_means: DVector<f64>,
    col_scales: DVector<f64>,
}

impl StandardizedMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn col_means(&self) -> &DVector<f64> {
        &self.col_means
    }

    pub fn col_scales(&self) -> &DVector<f64> {
        &self.col_scales
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// Undo the standardization.
    pub fn to_original(&self) -> DMatrix<f64> {
        let mut out = self.values.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.col_means[j], self.col_scales[j]);
            col.apply(|v| *v = *v * s + m);
        }
        out
    }

    /// Horizontal concatenation `[self, other]`; both are already standardized.
    pub fn hstack(&self, other: &StandardizedMatrix) -> Result<StandardizedMatrix> {
        if self.nrows() != other.nrows() {
            return Err(Error::dims("rows of stacked matrices", self.nrows(), other.nrows()));
        }
        let (n, a, b) = (self.nrows(), self.ncols(), other.ncols());
        let mut values = DMatrix::zeros(n, a + b);
        values.columns_mut(0, a).copy_from(&self.values);
        values.columns_mut(a, b).copy_from(&other.values);
        let col_means = DVector::from_iterator(
            a + b,
            self.col_means.iter().chain(other.col_means.iter()).copied(),
        );
        let col_scales = DVector::from_iterator(
            a + b,
            self.col_scales.iter().chain(other.col_scales.iter()).copied(),
        );
        Ok(StandardizedMatrix {
            values,
            col_means,
            col_scales,
        })
    }

    /// Sample correlation matrix `XᵀX / (n - 1)`.
    pub fn correlation(&self) -> DMatrix<f64> {
        let n = self.nrows() as f64;
        let mut c = linalg::gram(&self.values) / (n - 1.0);
        for j in 0..c.nrows() {
            c[(j, j)] = 1.0;
        }
        c
    }
}

pub fn standardize(raw: &DMatrix<f64>) -> Result<StandardizedMatrix> {
    let (n, k) = raw.shape();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "standardization needs at least 2 rows, got {n}"
        )));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let mut values = raw.clone();
    let mut col_means = DVector::zeros(k);
    let mut col_scales = DVector::zeros(k);
    for (j, mut col) in values.column_iter_mut().enumerate() {
        let mean = col.iter().sum::<f64>() / n as f64;
        let ss: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
        let sd = (ss / (n as f64 - 1.0)).sqrt();
        if !(sd > 0.0) || sd <= 1e-12 * mean.abs().max(1.0) {
            return Err(Error::ZeroVarianceColumn(j));
        }
        col.apply(|v| *v = (*v - mean) / sd);
        // A second centring pass removes the rounding left by the first.
        let resid = col.iter().sum::<f64>() / n as f64;
        col.apply(|v| *v -= resid);
        col_means[j] = mean;
        col_scales[j] = sd;
    }
    Ok(StandardizedMatrix {
        values,
        col_means,
        col_scales,
    })
}

/// Standardized `p × L` annotation matrix. Every column sums to zero, which
/// is what lets the `Σ log φ_j` term drop out of the weight update.
#[derive(Clone, Debug)]
pub struct AnnotationMatrix {
    values: DMatrix<f64>,
    names: Vec<String>,
    snp_ids: Vec<String>,
}

impl AnnotationMatrix {
    /// Standardize raw annotation columns; constant columns are rejected.
    pub fn from_raw(snp_ids: Vec<String>, names: Vec<String>, raw: &DMatrix<f64>) -> Result<Self> {
        if raw.nrows() != snp_ids.len() {
            return Err(Error::dims("annotation rows vs SNP ids", raw.nrows(), snp_ids.len()));
        }
        if raw.ncols() != names.len() {
            return Err(Error::dims("annotation columns vs names", raw.ncols(), names.len()));
        }
        check_unique(&snp_ids)?;
        if raw.ncols() == 0 {
            return Ok(Self::empty_with_ids(snp_ids));
        }
        let values = match standardize(raw) {
            Ok(s) => s.into_values(),
            Err(Error::ZeroVarianceColumn(j)) => {
                return Err(Error::ConstantAnnotation(names[j].clone()))
            }
            Err(e) => return Err(e),
        };
        Ok(Self {
            values,
            names,
            snp_ids,
        })
    }

    /// Annotation matrix with no columns: every penalty weight stays at 1.
    pub fn empty(p: usize) -> Self {
        Self::empty_with_ids((1..=p).map(|j| format!("v{j}")).collect())
    }

    fn empty_with_ids(snp_ids: Vec<String>) -> Self {
        Self {
            values: DMatrix::zeros(snp_ids.len(), 0),
            names: Vec::new(),
            snp_ids,
        }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn snp_ids(&self) -> &[String] {
        &self.snp_ids
    }

    pub fn p(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_annotations(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }
}

/// Marginal Z-scores with the GWAS sample size.
#[derive(Clone, Debug)]
pub struct SummaryStats {
    pub snp_ids: Vec<String>,
    pub z: DVector<f64>,
    pub n: usize,
}

impl SummaryStats {
    pub fn new(snp_ids: Vec<String>, z: DVector<f64>, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("sample size must be at least 2, got {n}")));
        }
        if snp_ids.len() != z.len() {
            return Err(Error::dims("SNP ids vs z-scores", snp_ids.len(), z.len()));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        check_unique(&snp_ids)?;
        Ok(Self { snp_ids, z, n })
    }

    pub fn p(&self) -> usize {
        self.z.len()
    }
}

/// Positive definite LD (correlation) matrix after optional shrinkage
/// `(1 - ε)Σ + εI` and diagonal renormalization.
#[derive(Clone, Debug)]
pub struct LdMatrix {
    sigma: DMatrix<f64>,
    regularization: f64,
}

impl LdMatrix {
    pub fn new(sigma: DMatrix<f64>, shrinkage: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&shrinkage) {
            return Err(Error::InvalidArgument(format!(
                "shrinkage must lie in [0, 1), got {shrinkage}"
            )));
        }
        let (r, c) = sigma.shape();
        if r != c {
            return Err(Error::dims("LD matrix rows vs columns", r, c));
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let asym = linalg::max_asymmetry(&sigma);
        if asym > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "LD matrix is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        let mut s = sigma * (1.0 - shrinkage);
        for j in 0..r {
            s[(j, j)] += shrinkage;
        }
        let d: Vec<f64> = (0..r).map(|j| s[(j, j)]).collect();
        if d.iter().any(|v| *v <= 0.0) {
            return Err(Error::NotPositiveDefinite(" (non-positive LD diagonal)".into()));
        }
        for j in 0..r {
            for i in 0..r {
                s[(i, j)] /= (d[i] * d[j]).sqrt();
            }
            s[(j, j)] = 1.0;
        }
        linalg::symmetrize(&mut s);
        linalg::cholesky(&s, "LD matrix")?;
        Ok(Self {
            sigma: s,
            regularization: shrinkage,
        })
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    pub fn p(&self) -> usize {
        self.sigma.nrows()
    }
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateSnpId(id.clone()));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Text tables

/// Header plus labelled numeric rows, as read from a TSV file whose first
/// column is an identifier.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelledTable {
    pub header: Vec<String>,
    pub labels: Vec<String>,
    pub values: DMatrix<f64>,
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(line, format!("non-numeric value '{field}'")))
}

pub fn parse_labelled_table(text: &str) -> Result<LabelledTable> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header_line) = lines.next().ok_or_else(|| Error::parse(1, "no data rows"))?;
    let header: Vec<String> = header_line.split('\t').map(|s| s.trim().to_string()).collect();
    let width = header.len();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut last_line = 1;
    for (line, l) in lines {
        last_line = line;
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != width {
            return Err(Error::parse(
                line,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        labels.push(fields[0].trim().to_string());
        for f in &fields[1..] {
            data.push(parse_f64(f, line)?);
        }
    }
    if labels.is_empty() {
        return Err(Error::parse(last_line, "no data rows"));
    }
    let values = DMatrix::from_row_slice(labels.len(), width - 1, &data);
    Ok(LabelledTable {
        header,
        labels,
        values,
    })
}

fn read_text(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}

fn write_labelled_table(path: &Path, header: &[String], labels: &[String], values: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", header.join("\t"))?;
    for (i, label) in labels.iter().enumerate() {
        write!(w, "{label}")?;
        for v in values.row(i).iter() {
            write!(w, "\t{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Designs

/// Individual-level data: standardized covariates and response.
#[derive(Clone, Debug)]
pub struct Design {
    pub sample_ids: Vec<String>,
    pub covariate_names: Vec<String>,
    pub x: StandardizedMatrix,
    /// The response as its own standardized single-column matrix.
    pub response: StandardizedMatrix,
}

impl Design {
    pub fn y(&self) -> DVector<f64> {
        self.response.values().column(0).into_owned()
    }
}

/// Raw design table: header `id <cov1> ... <covp> y`.
pub fn read_design_raw(path: &Path) -> Result<LabelledTable> {
    let table = parse_labelled_table(&read_text(path)?)?;
    if table.header.len() < 3 {
        return Err(Error::parse(1, "design header needs id, at least one covariate and y"));
    }
    Ok(table)
}

pub fn load_design(path: &Path) -> Result<Design> {
    let table = read_design_raw(path)?;
    let n = table.values.nrows();
    let p = table.values.ncols() - 1;
    let x = standardize(&table.values.columns(0, p).into_owned())?;
    let response = match standardize(&table.values.columns(p, 1).into_owned()) {
        Err(Error::ZeroVarianceColumn(_)) => return Err(Error::ZeroVarianceColumn(p)),
        other => other?,
    };
    debug_assert_eq!(response.nrows(), n);
    Ok(Design {
        sample_ids: table.labels,
        covariate_names: table.header[1..=p].to_vec(),
        x,
        response,
    })
}

pub fn write_design(
    path: &Path,
    sample_ids: &[String],
    covariate_names: &[String],
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::dims("design rows vs response length", x.nrows(), y.len()));
    }
    if x.ncols() != covariate_names.len() {
        return Err(Error::dims("design columns vs names", x.ncols(), covariate_names.len()));
    }
    let mut header = vec!["id".to_string()];
    header.extend(covariate_names.iter().cloned());
    header.push("y".into());
    let mut values = DMatrix::zeros(x.nrows(), x.ncols() + 1);
    values.columns_mut(0, x.ncols()).copy_from(x);
    values.column_mut(x.ncols()).copy_from(y);
    write_labelled_table(path, &header, sample_ids, &values)
}

// ---------------------------------------------------------------------------
// Summary statistics and annotations

pub fn load_summary_stats(path: &Path, n: usize) -> Result<SummaryStats> {
    let table = parse_labelled_table(&read_text(path)?)?;
    if table.header.len() != 2 {
        return Err(Error::parse(1, "summary statistics header must be 'snp\\tz'"));
    }
    SummaryStats::new(table.labels, table.values.column(0).into_owned(), n)
}

pub fn write_summary_stats(path: &Path, snp_ids: &[String], z: &DVector<f64>) -> Result<()> {
    let header = vec!["snp".to_string(), "z".to_string()];
    write_labelled_table(path, &header, snp_ids, &DMatrix::from_column_slice(z.len(), 1, z.as_slice()))
}

pub fn read_annotations_raw(path: &Path) -> Result<LabelledTable> {
    let table = parse_labelled_table(&read_text(path)?)?;
    if table.header.len() < 2 {
        return Err(Error::parse(1, "annotation header needs snp and at least one annotation"));
    }
    Ok(table)
}

pub fn load_annotations(path: &Path) -> Result<AnnotationMatrix> {
    let table = read_annotations_raw(path)?;
    AnnotationMatrix::from_raw(table.labels, table.header[1..].to_vec(), &table.values)
}

pub fn write_annotations(path: &Path, snp_ids: &[String], names: &[String], raw: &DMatrix<f64>) -> Result<()> {
    let mut header = vec!["snp".to_string()];
    header.extend(names.iter().cloned());
    write_labelled_table(path, &header, snp_ids, raw)
}

// ---------------------------------------------------------------------------
// LD matrices

/// Read an LD matrix in either format without shrinkage or validation.
pub fn read_ld_raw(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(LD_MAGIC) {
        return decode_ld_binary(&bytes);
    }
    let text = String::from_utf8(bytes).map_err(|_| Error::parse(1, "LD file is neither LDMX binary nor UTF-8 text"))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, l) in text.lines().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let row = l
            .trim_end_matches('\r')
            .split('\t')
            .map(|f| parse_f64(f, i + 1))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::parse(i + 1, format!("expected {} fields, found {}", first.len(), row.len())));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(1, "no data rows"));
    }
    if rows.len() != rows[0].len() {
        return Err(Error::dims("LD matrix rows vs columns", rows.len(), rows[0].len()));
    }
    let p = rows.len();
    Ok(DMatrix::from_row_iterator(p, p, rows.into_iter().flatten()))
}

fn decode_ld_binary(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < 8 {
        return Err(Error::parse(0, "truncated LDMX header"));
    }
    let p = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = 8 + p * p * 8;
    if bytes.len() != expected {
        return Err(Error::parse(0, format!("LDMX payload has {} bytes, expected {expected}", bytes.len())));
    }
    let vals = bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    Ok(DMatrix::from_row_iterator(p, p, vals))
}

pub fn load_ld(path: &Path, shrinkage: f64) -> Result<LdMatrix> {
    LdMatrix::new(read_ld_raw(path)?, shrinkage)
}

pub fn write_ld_binary(path: &Path, sigma: &DMatrix<f64>) -> Result<()> {
    let p = sigma.nrows();
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(LD_MAGIC)?;
    w.write_all(&(p as u32).to_le_bytes())?;
    for i in 0..p {
        for j in 0..p {
            w.write_all(&sigma[(i, j)].to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_ld_text(path: &Path, sigma: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for row in sigma.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", fields.join("\t"))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn three_point_column() {
        let raw = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let s = standardize(&raw).unwrap();
        assert_relative_eq!(s.values()[(0, 0)], -1.0, epsilon = 1e-15);
        assert_relative_eq!(s.values()[(1, 0)], 0.0, epsilon = 1e-15);
        assert_relative_eq!(s.values()[(2, 0)], 1.0, epsilon = 1e-15);
        assert_eq!(s.col_means()[0], 2.0);
        assert_eq!(s.col_scales()[0], 1.0);
    }

    fn check_invariants(s: &StandardizedMatrix) {
        let n = s.nrows() as f64;
        for col in s.values().column_iter() {
            let mean = col.sum() / n;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!(mean.abs() < 1e-10, "mean {mean}");
            assert!((sd - 1.0).abs() < 1e-8, "sd {sd}");
        }
        assert!(s.col_scales().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn random_matrix_meets_invariants_and_is_idempotent() {
        let mut rng = crate::seed::rng(3);
        let raw = DMatrix::from_fn(50, 5, |_, j| rng.random::<f64>() * (j as f64 + 1.0) + 10.0);
        let s = standardize(&raw).unwrap();
        check_invariants(&s);
        let again = standardize(s.values()).unwrap();
        check_invariants(&again);
        for (a, b) in again.values().iter().zip(s.values().iter()) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!(again.col_means().iter().all(|m| m.abs() < 1e-10));
        assert!(again.col_scales().iter().all(|v| (v - 1.0).abs() < 1e-8));
        let back = s.to_original();
        for (a, b) in back.iter().zip(raw.iter()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-10);
        }
    }

    #[test]
    fn constant_and_nonfinite_columns_rejected() {
        let raw = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
        assert!(matches!(standardize(&raw), Err(Error::ZeroVarianceColumn(1))));
        let raw = DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]);
        assert!(matches!(standardize(&raw), Err(Error::NonFiniteInput)));
    }

    #[test]
    fn ld_identity_and_rank_deficient_paths() {
        let ld = LdMatrix::new(DMatrix::identity(4, 4), 0.0).unwrap();
        assert_eq!(ld.sigma(), &DMatrix::<f64>::identity(4, 4));

        // Columns 0 and 1 of the underlying design are duplicates.
        let mut rng = crate::seed::rng(9);
        let mut x = DMatrix::from_fn(40, 3, |_, _| rng.random::<f64>());
        let c0 = x.column(0).into_owned();
        x.column_mut(1).copy_from(&c0);
        let corr = standardize(&x).unwrap().correlation();
        assert!(matches!(LdMatrix::new(corr.clone(), 0.0), Err(Error::NotPositiveDefinite(_))));
        let ld = LdMatrix::new(corr, 0.05).unwrap();
        assert!((0..3).all(|j| (ld.sigma()[(j, j)] - 1.0).abs() < 1e-8));
        assert_eq!(ld.regularization(), 0.05);
    }

    #[test]
    fn annotations_reject_constant_column_by_name() {
        let raw = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 0.0, 3.0, 0.0]);
        let err = AnnotationMatrix::from_raw(
            vec!["a".into(), "b".into(), "c".into()],
            vec!["idx".into(), "flat".into()],
            &raw,
        )
        .unwrap_err();
        assert!(matches!(err, Error::ConstantAnnotation(ref n) if n == "flat"));
    }

    #[test]
    fn binary_annotation_is_standardized() {
        let raw = DMatrix::from_column_slice(4, 1, &[1.0, 1.0, 0.0, 0.0]);
        let ids = (0..4).map(|i| i.to_string()).collect();
        let a = AnnotationMatrix::from_raw(ids, vec!["bin".into()], &raw).unwrap();
        assert!(a.values().column(0).sum().abs() < 1e-8);
    }

    #[test]
    fn summary_stats_validation() {
        let ids = vec!["a".to_string(), "a".to_string()];
        let z = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(SummaryStats::new(ids, z.clone(), 10), Err(Error::DuplicateSnpId(_))));
        let ids = vec!["a".to_string(), "b".to_string()];
        assert!(SummaryStats::new(ids.clone(), z.clone(), 1).is_err());
        assert!(SummaryStats::new(ids, z, 2).is_ok());
    }

    #[test]
    fn table_parse_errors() {
        let err = parse_labelled_table("id\ta\ty\ns1\t1\t2\ns2\tx\t3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse_labelled_table("").unwrap_err();
        assert!(err.to_string().contains("no data rows"));
        let err = parse_labelled_table("id\ta\ty\n").unwrap_err();
        assert!(err.to_string().contains("no data rows"));
    }
}
