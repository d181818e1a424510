//! Core value types: datasets, ranks, graphs, basis expansion and CSV I/O.

use std::collections::{BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::order::SinkStep;

/// An `n × m` matrix of finite observations with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Array2<f64>,
    column_names: Vec<String>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl Dataset {
    pub fn new(values: Array2<f64>, column_names: Vec<String>) -> Result<Self, DataError> {
        let (n, m) = values.dim();
        if m == 0 {
            return Err(DataError::NoColumns);
        }
        if n < 2 {
            return Err(DataError::TooFewRows(n));
        }
        if column_names.len() != m {
            return Err(DataError::Shape(format!(
                "{} column names for {} columns",
                column_names.len(),
                m
            )));
        }
        let mut seen = HashSet::new();
        for name in &column_names {
            if !valid_name(name) {
                return Err(DataError::InvalidColumnName(name.clone()));
            }
            if !seen.insert(name.as_str()) {
                return Err(DataError::DuplicateColumn(name.clone()));
            }
        }
        if let Some(((row, column), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(DataError::NonFinite { row, column });
        }
        Ok(Self {
            values,
            column_names,
        })
    }

    /// Builds a dataset with default column names `X1, X2, …`.
    pub fn with_default_names(values: Array2<f64>) -> Result<Self, DataError> {
        let names = (1..=values.ncols()).map(|j| format!("X{j}")).collect();
        Self::new(values, names)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn m(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.values.column(j)
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column_index(&self, name: &str) -> Result<usize, DataError> {
        self.column_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))
    }

    /// Copies the listed columns, in the listed order, into a new matrix.
    pub fn select_columns(&self, columns: &[usize]) -> Array2<f64> {
        Array2::from_shape_fn((self.n(), columns.len()), |(i, k)| {
            self.values[[i, columns[k]]]
        })
    }
}

/// Ranks `1..=n` of a tie-free sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankVector {
    ranks: Vec<usize>,
    /// Sample indices in increasing rank order.
    order: Vec<usize>,
}

impl RankVector {
    pub fn from_ranks(ranks: Vec<usize>) -> Result<Self, DataError> {
        let n = ranks.len();
        let mut order = vec![usize::MAX; n];
        for (i, &r) in ranks.iter().enumerate() {
            if r == 0 || r > n || order[r - 1] != usize::MAX {
                return Err(DataError::NotAPermutation(n));
            }
            order[r - 1] = i;
        }
        Ok(Self { ranks, order })
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    /// Sample indices sorted by increasing rank.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

/// `ranks[i] = #{j : y_j <= y_i}`; exact ties are rejected.
pub fn compute_ranks(y: &[f64]) -> Result<RankVector, DataError> {
    if let Some(row) = y.iter().position(|v| !v.is_finite()) {
        return Err(DataError::NonFinite { row, column: 0 });
    }
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    for w in order.windows(2) {
        if y[w[0]] == y[w[1]] {
            return Err(DataError::TiesPresent {
                first: w[0].min(w[1]),
                second: w[0].max(w[1]),
            });
        }
    }
    let mut ranks = vec![0; y.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = pos + 1;
    }
    Ok(RankVector { ranks, order })
}

/// Breaks exact ties by adding seeded jitter of magnitude `1e-12 · scale`
/// to tied entries, where `scale = max(1, max |y|)`. Untied entries are
/// returned unchanged.
pub fn jitter_ties(y: &[f64], seed: u64) -> Vec<f64> {
    let scale = y.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = y.to_vec();
    loop {
        let mut order: Vec<usize> = (0..out.len()).collect();
        order.sort_by(|&a, &b| out[a].total_cmp(&out[b]).then(a.cmp(&b)));
        let tied: BTreeSet<usize> = order
            .windows(2)
            .filter(|w| out[w[0]] == out[w[1]])
            .flat_map(|w| [w[0], w[1]])
            .collect();
        if tied.is_empty() {
            return out;
        }
        for i in tied {
            out[i] += 1e-12 * scale * rng.random_range(-1.0..1.0);
        }
    }
}

/// Polynomial degree of a per-column monomial expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct BasisSpec {
    degree: usize,
}

impl BasisSpec {
    pub fn new(degree: usize) -> Result<Self, DataError> {
        if degree == 0 {
            return Err(DataError::Shape("basis degree must be >= 1".into()));
        }
        Ok(Self { degree })
    }

    pub fn linear() -> Self {
        Self { degree: 1 }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of design columns produced from `p` inputs.
    pub fn expanded_dim(&self, p: usize) -> usize {
        p * self.degree
    }
}

impl TryFrom<usize> for BasisSpec {
    type Error = DataError;
    fn try_from(d: usize) -> Result<Self, DataError> {
        Self::new(d)
    }
}

impl From<BasisSpec> for usize {
    fn from(b: BasisSpec) -> usize {
        b.degree
    }
}

/// Expands each column `x_j` into `[x_j, x_j², …, x_j^d]`, grouped by source
/// column. No intercept and no cross terms.
pub fn expand_basis(x: ArrayView2<'_, f64>, spec: BasisSpec) -> Array2<f64> {
    let d = spec.degree;
    let (n, p) = x.dim();
    let mut out = Array2::zeros((n, p * d));
    for j in 0..p {
        for i in 0..n {
            let v = x[[i, j]];
            let mut pow = v;
            for k in 0..d {
                out[[i, j * d + k]] = pow;
                pow *= v;
            }
        }
    }
    out
}

/// A directed acyclic graph on nodes `0..m`.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(try_from = "DagRepr")]
pub struct Dag {
    m: usize,
    edges: BTreeSet<(usize, usize)>,
}

#[derive(Deserialize)]
struct DagRepr {
    m: usize,
    edges: Vec<(usize, usize)>,
}

impl TryFrom<DagRepr> for Dag {
    type Error = DataError;
    fn try_from(r: DagRepr) -> Result<Self, DataError> {
        Dag::new(r.m, r.edges)
    }
}

impl Dag {
    pub fn new(m: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, DataError> {
        let edges: BTreeSet<_> = edges.into_iter().collect();
        for &(a, b) in &edges {
            if a == b || a >= m || b >= m {
                return Err(DataError::InvalidEdge(a, b));
            }
        }
        let dag = Self { m, edges };
        if dag.topological_order().is_none() {
            return Err(DataError::Cyclic);
        }
        Ok(dag)
    }

    pub fn empty(m: usize) -> Self {
        Self {
            m,
            edges: BTreeSet::new(),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, parent: usize, child: usize) -> bool {
        self.edges.contains(&(parent, child))
    }

    /// Parents of `k` in increasing index order.
    pub fn parents(&self, k: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|&&(_, c)| c == k)
            .map(|&(p, _)| p)
            .collect()
    }

    /// Kahn's algorithm, smallest available index first; `None` on a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let mut indeg = vec![0usize; self.m];
        for &(_, c) in &self.edges {
            indeg[c] += 1;
        }
        let mut ready: BTreeSet<usize> = (0..self.m).filter(|&k| indeg[k] == 0).collect();
        let mut out = Vec::with_capacity(self.m);
        while let Some(k) = ready.pop_first() {
            out.push(k);
            for &(p, c) in &self.edges {
                if p == k {
                    indeg[c] -= 1;
                    if indeg[c] == 0 {
                        ready.insert(c);
                    }
                }
            }
        }
        (out.len() == self.m).then_some(out)
    }
}

impl Serialize for Dag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Dag", 2)?;
        st.serialize_field("m", &self.m)?;
        st.serialize_field("edges", &self.edges.iter().collect::<Vec<_>>())?;
        st.end()
    }
}

/// An estimated causal ordering: `order[0]` is the first (source-most) node,
/// `order[m-1]` the first sink eliminated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CausalOrdering {
    order: Vec<usize>,
    steps: Vec<SinkStep>,
}

impl CausalOrdering {
    pub fn new(order: Vec<usize>, steps: Vec<SinkStep>) -> Result<Self, DataError> {
        let m = order.len();
        let mut seen = vec![false; m];
        for &k in &order {
            if k >= m || seen[k] {
                return Err(DataError::NotAPermutation(m));
            }
            seen[k] = true;
        }
        for step in &steps {
            if step.t_values.len() != step.remaining.len() {
                return Err(DataError::Shape(
                    "step statistics must cover every remaining node".into(),
                ));
            }
        }
        Ok(Self { order, steps })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn steps(&self) -> &[SinkStep] {
        &self.steps
    }

    pub fn m(&self) -> usize {
        self.order.len()
    }
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    read_csv_from(std::fs::File::open(path)?)
}

/// Parses a header row followed by rows of finite reals. Reported rows are
/// 1-based data rows (the header is row 0); columns are 0-based.
pub fn read_csv_from<R: Read>(reader: R) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let m = names.len();
    let mut flat = Vec::new();
    let mut n = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != m {
            return Err(DataError::Parse {
                row: r + 1,
                column: record.len().min(m),
                message: format!("expected {m} fields, found {}", record.len()),
            });
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|e| DataError::Parse {
                row: r + 1,
                column: c,
                message: format!("`{field}`: {e}"),
            })?;
            if !v.is_finite() {
                return Err(DataError::NonFinite { row: r + 1, column: c });
            }
            flat.push(v);
        }
        n += 1;
    }
    let values =
        Array2::from_shape_vec((n, m), flat).map_err(|e| DataError::Shape(e.to_string()))?;
    Dataset::new(values, names)
}

pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_csv_to(dataset, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Writes shortest round-trip representations, LF line endings, no quoting.
pub fn write_csv_to<W: Write>(dataset: &Dataset, mut w: W) -> Result<(), DataError> {
    writeln!(w, "{}", dataset.column_names.join(","))?;
    let mut line = String::new();
    for row in dataset.values.rows() {
        line.clear();
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&format!("{v:?}"));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}
