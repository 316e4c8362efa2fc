//! Feeder data model and assembly of the partitioned complex admittance matrix.
//!
//! A feeder is a set of nodes (one slack, the rest PQ) joined by branches whose
//! series admittance blocks span the phases shared by both terminals. Missing
//! phases are never padded with zero rows; the node-phase index only contains
//! phases that physically exist, which keeps the load block `yll` invertible.

use std::collections::{HashMap, HashSet, VecDeque};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Deserialize;

use crate::{Error, Result};

/// Relative pivot threshold below which a matrix is treated as singular.
const SINGULAR_REL_TOL: f64 = 1e-12;

/// One conductor phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn letter(self) -> char {
        match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        }
    }

    pub fn from_letter(c: char) -> Option<Phase> {
        match c {
            'a' => Some(Phase::A),
            'b' => Some(Phase::B),
            'c' => Some(Phase::C),
            _ => None,
        }
    }

    /// Balanced positive-sequence unit phasor for this phase.
    pub fn balanced_unit(self) -> Complex64 {
        let half_sqrt3 = 3.0_f64.sqrt() / 2.0;
        match self {
            Phase::A => Complex64::new(1.0, 0.0),
            Phase::B => Complex64::new(-0.5, -half_sqrt3),
            Phase::C => Complex64::new(-0.5, half_sqrt3),
        }
    }
}

/// Ordered subset of {a, b, c} present at a node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseMask {
    present: Vec<Phase>,
}

impl PhaseMask {
    /// Parses a mask string such as `"abc"` or `"ab"`.
    pub fn parse(s: &str) -> Result<PhaseMask> {
        if s.is_empty() {
            return Err(Error::Format("phase mask must not be empty".into()));
        }
        let mut present = Vec::with_capacity(3);
        for c in s.chars() {
            let p = Phase::from_letter(c)
                .ok_or_else(|| Error::Format(format!("invalid phase character '{c}'")))?;
            if present.contains(&p) {
                return Err(Error::Format(format!("duplicate phase '{c}' in mask")));
            }
            present.push(p);
        }
        present.sort();
        Ok(PhaseMask { present })
    }

    pub fn phases(&self) -> &[Phase] {
        &self.present
    }

    pub fn len(&self) -> usize {
        self.present.len()
    }

    pub fn is_empty(&self) -> bool {
        self.present.is_empty()
    }

    pub fn contains(&self, p: Phase) -> bool {
        self.present.contains(&p)
    }

    /// Phases present at both masks, in a,b,c order.
    pub fn intersection(&self, other: &PhaseMask) -> Vec<Phase> {
        self.present
            .iter()
            .copied()
            .filter(|p| other.contains(*p))
            .collect()
    }

    /// Position of `p` within this mask.
    pub fn offset(&self, p: Phase) -> Option<usize> {
        self.present.iter().position(|q| *q == p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Slack,
    Pq,
}

/// Per-node ZIP load data, aligned with the node's phase mask.
#[derive(Debug, Clone)]
pub struct NodeZip {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub s_nom: Vec<Complex64>,
    pub v_nom_mag: Vec<f64>,
}

/// One feeder node.
#[derive(Debug, Clone)]
pub struct NodeSpec {
    pub id: String,
    pub kind: NodeKind,
    pub phases: PhaseMask,
    /// Fixed phasors for slack nodes, aligned with the mask. Empty for PQ.
    pub v_slack: Vec<Complex64>,
    pub zip: Option<NodeZip>,
}

/// One feeder branch. The series block spans the phases shared by both
/// terminals; optional shunt blocks have the same span and attach at the
/// respective terminal.
#[derive(Debug, Clone)]
pub struct BranchSpec {
    pub from: String,
    pub to: String,
    pub y_series: DMatrix<Complex64>,
    pub y_shunt_from: Option<DMatrix<Complex64>>,
    pub y_shunt_to: Option<DMatrix<Complex64>>,
}

/// Validated feeder: one slack, connected graph, consistent phase spans.
#[derive(Debug, Clone)]
pub struct Feeder {
    pub base_mva: f64,
    pub nodes: Vec<NodeSpec>,
    pub branches: Vec<BranchSpec>,
}

// ---------------------------------------------------------------------------
// Feeder file schema
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeederFile {
    base_mva: f64,
    nodes: Vec<NodeFile>,
    branches: Vec<BranchFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeFile {
    id: String,
    kind: NodeKind,
    phases: String,
    #[serde(default)]
    v_slack: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    zip: Option<ZipFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ZipFile {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    s_nom: Vec<[f64; 2]>,
    v_nom_mag: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchFile {
    from: String,
    to: String,
    y_series: Vec<Vec<[f64; 2]>>,
    #[serde(default)]
    y_shunt_from: Option<Vec<Vec<[f64; 2]>>>,
    #[serde(default)]
    y_shunt_to: Option<Vec<Vec<[f64; 2]>>>,
}

fn complex(pair: [f64; 2]) -> Complex64 {
    Complex64::new(pair[0], pair[1])
}

fn parse_matrix(rows: &[Vec<[f64; 2]>], what: &str) -> Result<DMatrix<Complex64>> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::Format(format!("{what}: matrix must not be empty")));
    }
    for r in rows {
        if r.len() != n {
            return Err(Error::Format(format!("{what}: matrix must be square")));
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| complex(rows[i][j])))
}

impl Feeder {
    /// Parses and validates a feeder document.
    pub fn from_json_str(text: &str) -> Result<Feeder> {
        let file: FeederFile = serde_json::from_str(text)?;
        Feeder::from_file(file)
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Feeder> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.as_ref().display()),
            ))
        })?;
        Feeder::from_json_str(&text)
    }

    fn from_file(file: FeederFile) -> Result<Feeder> {
        if !(file.base_mva > 0.0) {
            return Err(Error::Format("base_mva must be positive".into()));
        }
        let mut nodes = Vec::with_capacity(file.nodes.len());
        for nf in &file.nodes {
            let phases = PhaseMask::parse(&nf.phases)?;
            let v_slack = match nf.kind {
                NodeKind::Slack => match &nf.v_slack {
                    Some(vs) => {
                        if vs.len() != phases.len() {
                            return Err(Error::Format(format!(
                                "node {}: v_slack has {} entries for {} phases",
                                nf.id,
                                vs.len(),
                                phases.len()
                            )));
                        }
                        vs.iter().map(|p| complex(*p)).collect()
                    }
                    None => phases.phases().iter().map(|p| p.balanced_unit()).collect(),
                },
                NodeKind::Pq => {
                    if nf.v_slack.is_some() {
                        return Err(Error::Format(format!(
                            "node {}: v_slack is only valid on the slack node",
                            nf.id
                        )));
                    }
                    Vec::new()
                }
            };
            let zip = match &nf.zip {
                Some(z) => {
                    let m = phases.len();
                    if z.a.len() != m
                        || z.b.len() != m
                        || z.c.len() != m
                        || z.s_nom.len() != m
                        || z.v_nom_mag.len() != m
                    {
                        return Err(Error::Format(format!(
                            "node {}: zip arrays must all have {} entries",
                            nf.id, m
                        )));
                    }
                    Some(NodeZip {
                        a: z.a.clone(),
                        b: z.b.clone(),
                        c: z.c.clone(),
                        s_nom: z.s_nom.iter().map(|p| complex(*p)).collect(),
                        v_nom_mag: z.v_nom_mag.clone(),
                    })
                }
                None => None,
            };
            nodes.push(NodeSpec {
                id: nf.id.clone(),
                kind: nf.kind,
                phases,
                v_slack,
                zip,
            });
        }

        let mut branches = Vec::with_capacity(file.branches.len());
        for bf in &file.branches {
            let name = format!("branch {}-{}", bf.from, bf.to);
            let y_series = parse_matrix(&bf.y_series, &name)?;
            let y_shunt_from = match &bf.y_shunt_from {
                Some(m) => Some(parse_matrix(m, &name)?),
                None => None,
            };
            let y_shunt_to = match &bf.y_shunt_to {
                Some(m) => Some(parse_matrix(m, &name)?),
                None => None,
            };
            branches.push(BranchSpec {
                from: bf.from.clone(),
                to: bf.to.clone(),
                y_series,
                y_shunt_from,
                y_shunt_to,
            });
        }

        let feeder = Feeder {
            base_mva: file.base_mva,
            nodes,
            branches,
        };
        feeder.validate()?;
        Ok(feeder)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for n in &self.nodes {
            if !seen.insert(n.id.clone()) {
                return Err(Error::Format(format!("duplicate node id {}", n.id)));
            }
        }
        let slack_count = self
            .nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Slack)
            .count();
        if slack_count != 1 {
            return Err(Error::Topology(format!(
                "expected exactly one slack node, found {slack_count}"
            )));
        }
        for b in &self.branches {
            for end in [&b.from, &b.to] {
                if self.node(end).is_none() {
                    return Err(Error::Topology(format!(
                        "branch {}-{} references unknown node {end}",
                        b.from, b.to
                    )));
                }
            }
            if b.from == b.to {
                return Err(Error::Topology(format!(
                    "branch {}-{} connects a node to itself",
                    b.from, b.to
                )));
            }
        }
        Ok(())
    }

    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn slack(&self) -> &NodeSpec {
        self.nodes
            .iter()
            .find(|n| n.kind == NodeKind::Slack)
            .expect("validated feeder has one slack")
    }

    /// True when every load is constant-power (all ZIP blocks have a=b=0).
    pub fn is_constant_power(&self) -> bool {
        self.nodes.iter().all(|n| match &n.zip {
            None => true,
            Some(z) => {
                z.a.iter()
                    .zip(z.b.iter())
                    .all(|(a, b)| *a == 0.0 && *b == 0.0)
            }
        })
    }
}

// ---------------------------------------------------------------------------
// Node-phase indexing and the partitioned admittance system
// ---------------------------------------------------------------------------

/// Bijection between (node, phase) pairs and row/column positions.
///
/// Slack phases and load (non-slack) node-phases are indexed separately; the
/// load ordering follows node appearance order with phases in a,b,c order.
#[derive(Debug, Clone)]
pub struct NodePhaseIndex {
    slack_entries: Vec<(String, Phase)>,
    l_entries: Vec<(String, Phase)>,
    l_lookup: HashMap<(String, Phase), usize>,
}

impl NodePhaseIndex {
    pub fn dim_slack(&self) -> usize {
        self.slack_entries.len()
    }

    pub fn dim_l(&self) -> usize {
        self.l_entries.len()
    }

    pub fn slack_entries(&self) -> &[(String, Phase)] {
        &self.slack_entries
    }

    pub fn l_entries(&self) -> &[(String, Phase)] {
        &self.l_entries
    }

    /// Row/column of a load node-phase.
    pub fn position(&self, node: &str, phase: Phase) -> Option<usize> {
        self.l_lookup.get(&(node.to_string(), phase)).copied()
    }
}

/// Partitioned complex node-admittance blocks plus the node-phase index map.
#[derive(Clone)]
pub struct AdmittanceSystem {
    pub y00: DMatrix<Complex64>,
    pub y0l: DMatrix<Complex64>,
    pub yl0: DMatrix<Complex64>,
    pub yll: DMatrix<Complex64>,
    pub index: NodePhaseIndex,
    yll_lu: nalgebra::linalg::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl std::fmt::Debug for AdmittanceSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdmittanceSystem")
            .field("dim_slack", &self.index.dim_slack())
            .field("dim_l", &self.index.dim_l())
            .finish()
    }
}

impl AdmittanceSystem {
    pub fn dim_l(&self) -> usize {
        self.index.dim_l()
    }

    pub fn dim_slack(&self) -> usize {
        self.index.dim_slack()
    }

    /// Solves `yll · x = rhs` against the factorization built at assembly.
    pub fn solve_yll(&self, rhs: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        if rhs.len() != self.dim_l() {
            return Err(Error::DimensionMismatch {
                expected: self.dim_l(),
                got: rhs.len(),
            });
        }
        self.yll_lu
            .solve(rhs)
            .ok_or_else(|| Error::SingularSystem("yll".into()))
    }

    /// Solves `yll · X = RHS` for a matrix right-hand side.
    pub fn solve_yll_matrix(&self, rhs: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        if rhs.nrows() != self.dim_l() {
            return Err(Error::DimensionMismatch {
                expected: self.dim_l(),
                got: rhs.nrows(),
            });
        }
        self.yll_lu
            .solve(rhs)
            .ok_or_else(|| Error::SingularSystem("yll".into()))
    }

    /// Nodal currents `(i0, i_l)` for given voltages, straight from `i = Y·v`.
    pub fn currents(
        &self,
        v0: &DVector<Complex64>,
        v_l: &DVector<Complex64>,
    ) -> (DVector<Complex64>, DVector<Complex64>) {
        let i0 = &self.y00 * v0 + &self.y0l * v_l;
        let i_l = &self.yl0 * v0 + &self.yll * v_l;
        (i0, i_l)
    }
}

fn check_invertible(m: &DMatrix<Complex64>, what: &str) -> Result<()> {
    let lu = m.clone().lu();
    let u = lu.u();
    let mut max_pivot = 0.0_f64;
    let mut min_pivot = f64::INFINITY;
    for i in 0..u.nrows().min(u.ncols()) {
        let p = u[(i, i)].norm();
        max_pivot = max_pivot.max(p);
        min_pivot = min_pivot.min(p);
    }
    if max_pivot == 0.0 || min_pivot < SINGULAR_REL_TOL * max_pivot {
        return Err(Error::SingularSystem(what.into()));
    }
    Ok(())
}

/// Assembles the full nodal admittance matrix over present phases only and
/// partitions it by slack membership.
///
/// The diagonal block of a node sums the series and shunt blocks of its
/// incident branches; the off-diagonal block between two branch terminals is
/// the negated series block.
pub fn assemble_admittance(
    nodes: &[NodeSpec],
    branches: &[BranchSpec],
) -> Result<AdmittanceSystem> {
    let slack: Vec<&NodeSpec> = nodes.iter().filter(|n| n.kind == NodeKind::Slack).collect();
    if slack.len() != 1 {
        return Err(Error::Topology(format!(
            "expected exactly one slack node, found {}",
            slack.len()
        )));
    }
    let slack = slack[0];

    // Global positions: slack phases first, then load node-phases.
    let mut slack_entries = Vec::new();
    let mut l_entries = Vec::new();
    for n in nodes {
        if n.phases.is_empty() {
            return Err(Error::Topology(format!("node {} has no phases", n.id)));
        }
        for p in n.phases.phases() {
            if n.kind == NodeKind::Slack {
                slack_entries.push((n.id.clone(), *p));
            } else {
                l_entries.push((n.id.clone(), *p));
            }
        }
    }
    let ns = slack_entries.len();
    let nl = l_entries.len();
    let total = ns + nl;
    let mut global: HashMap<(String, Phase), usize> = HashMap::new();
    for (i, e) in slack_entries.iter().enumerate() {
        global.insert(e.clone(), i);
    }
    for (i, e) in l_entries.iter().enumerate() {
        global.insert(e.clone(), ns + i);
    }

    let node_by_id: HashMap<&str, &NodeSpec> = nodes.iter().map(|n| (n.id.as_str(), n)).collect();

    // Connectivity check over nodes.
    let mut adjacency: HashMap<&str, Vec<&str>> = HashMap::new();
    for b in branches {
        adjacency
            .entry(b.from.as_str())
            .or_default()
            .push(b.to.as_str());
        adjacency
            .entry(b.to.as_str())
            .or_default()
            .push(b.from.as_str());
    }
    let mut reached = HashSet::new();
    let mut queue = VecDeque::from([slack.id.as_str()]);
    reached.insert(slack.id.as_str());
    while let Some(n) = queue.pop_front() {
        for m in adjacency.get(n).map(|v| v.as_slice()).unwrap_or(&[]) {
            if reached.insert(m) {
                queue.push_back(m);
            }
        }
    }
    if reached.len() != nodes.len() {
        let missing: Vec<&str> = nodes
            .iter()
            .map(|n| n.id.as_str())
            .filter(|id| !reached.contains(id))
            .collect();
        return Err(Error::Topology(format!(
            "graph is disconnected; unreachable nodes: {}",
            missing.join(", ")
        )));
    }

    let mut y = DMatrix::<Complex64>::zeros(total, total);
    for b in branches {
        let from = node_by_id
            .get(b.from.as_str())
            .ok_or_else(|| Error::Topology(format!("unknown node {}", b.from)))?;
        let to = node_by_id
            .get(b.to.as_str())
            .ok_or_else(|| Error::Topology(format!("unknown node {}", b.to)))?;
        let shared = from.phases.intersection(&to.phases);
        let k = shared.len();
        if k == 0 {
            return Err(Error::Topology(format!(
                "branch {}-{}: terminals share no phase",
                b.from, b.to
            )));
        }
        if b.y_series.nrows() != k {
            return Err(Error::Topology(format!(
                "branch {}-{}: y_series is {}x{} but terminals share {k} phase(s)",
                b.from,
                b.to,
                b.y_series.nrows(),
                b.y_series.ncols()
            )));
        }
        check_invertible(&b.y_series, &format!("branch {}-{} y_series", b.from, b.to))?;
        for shunt in [&b.y_shunt_from, &b.y_shunt_to].into_iter().flatten() {
            if shunt.nrows() != k {
                return Err(Error::Topology(format!(
                    "branch {}-{}: shunt block must span the {k} shared phase(s)",
                    b.from, b.to
                )));
            }
        }

        let from_pos: Vec<usize> = shared
            .iter()
            .map(|p| global[&(from.id.clone(), *p)])
            .collect();
        let to_pos: Vec<usize> = shared
            .iter()
            .map(|p| global[&(to.id.clone(), *p)])
            .collect();
        for r in 0..k {
            for c in 0..k {
                let ys = b.y_series[(r, c)];
                y[(from_pos[r], from_pos[c])] += ys;
                y[(to_pos[r], to_pos[c])] += ys;
                y[(from_pos[r], to_pos[c])] -= ys;
                y[(to_pos[r], from_pos[c])] -= ys;
                if let Some(sh) = &b.y_shunt_from {
                    y[(from_pos[r], from_pos[c])] += sh[(r, c)];
                }
                if let Some(sh) = &b.y_shunt_to {
                    y[(to_pos[r], to_pos[c])] += sh[(r, c)];
                }
            }
        }
    }

    let y00 = y.view((0, 0), (ns, ns)).into_owned();
    let y0l = y.view((0, ns), (ns, nl)).into_owned();
    let yl0 = y.view((ns, 0), (nl, ns)).into_owned();
    let yll = y.view((ns, ns), (nl, nl)).into_owned();

    check_invertible(&yll, "yll")?;
    let yll_lu = yll.clone().lu();

    let l_lookup = l_entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.clone(), i))
        .collect();
    Ok(AdmittanceSystem {
        y00,
        y0l,
        yl0,
        yll,
        index: NodePhaseIndex {
            slack_entries,
            l_entries,
            l_lookup,
        },
        yll_lu,
    })
}

/// Zero-injection voltage profile `w = -yll⁻¹ · yl0 · v0`.
pub fn compute_w(sys: &AdmittanceSystem, v0: &DVector<Complex64>) -> Result<DVector<Complex64>> {
    if v0.len() != sys.dim_slack() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim_slack(),
            got: v0.len(),
        });
    }
    let rhs = -(&sys.yl0 * v0);
    sys.solve_yll(&rhs)
}

// ---------------------------------------------------------------------------
// Stacked ZIP load description
// ---------------------------------------------------------------------------

/// ZIP load data stacked over all load node-phases, aligned with the system
/// index. Coefficient triples satisfy a+b+c = 1 element-wise; active and
/// reactive power share the same coefficients and change rate.
#[derive(Debug, Clone)]
pub struct ZipLoadSpec {
    a: DVector<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    s_nom: DVector<Complex64>,
    v_nom_mag: DVector<f64>,
}

impl ZipLoadSpec {
    pub fn new(
        a: DVector<f64>,
        b: DVector<f64>,
        c: DVector<f64>,
        s_nom: DVector<Complex64>,
        v_nom_mag: DVector<f64>,
    ) -> Result<ZipLoadSpec> {
        let m = a.len();
        for (len, _what) in [
            (b.len(), "b"),
            (c.len(), "c"),
            (s_nom.len(), "s_nom"),
            (v_nom_mag.len(), "v_nom_mag"),
        ] {
            if len != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: len,
                });
            }
        }
        for i in 0..m {
            let sum = a[i] + b[i] + c[i];
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "zip coefficients at node-phase {i} sum to {sum}, expected 1"
                )));
            }
            if !(v_nom_mag[i] > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "v_nom_mag at node-phase {i} must be positive"
                )));
            }
        }
        Ok(ZipLoadSpec {
            a,
            b,
            c,
            s_nom,
            v_nom_mag,
        })
    }

    /// Constant-power spec (a=b=0, c=1) with the given nominal injections.
    pub fn constant_power(s_nom: DVector<Complex64>) -> ZipLoadSpec {
        let m = s_nom.len();
        ZipLoadSpec {
            a: DVector::zeros(m),
            b: DVector::zeros(m),
            c: DVector::from_element(m, 1.0),
            s_nom,
            v_nom_mag: DVector::from_element(m, 1.0),
        }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.len() == 0
    }

    pub fn s_nom(&self) -> &DVector<Complex64> {
        &self.s_nom
    }

    pub fn v_nom_mag(&self) -> &DVector<f64> {
        &self.v_nom_mag
    }

    pub fn coefficients(&self, m: usize) -> (f64, f64, f64) {
        (self.a[m], self.b[m], self.c[m])
    }

    pub fn is_constant_power(&self) -> bool {
        (0..self.len()).all(|m| self.a[m] == 0.0 && self.b[m] == 0.0)
    }

    /// The quadratic voltage factor A(|v|, v_nom) = a·r² + b·r + c, r = |v|/v_nom.
    pub fn voltage_factor(&self, m: usize, v_mag: f64) -> f64 {
        let r = v_mag / self.v_nom_mag[m];
        self.a[m] * r * r + self.b[m] * r + self.c[m]
    }

    /// Injections for change rates `lambda` at voltage `v`: s = λ ∘ s_nom ∘ A(|v|).
    pub fn injections(
        &self,
        lambda: &DVector<f64>,
        v: &DVector<Complex64>,
    ) -> Result<DVector<Complex64>> {
        if lambda.len() != self.len() || v.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: lambda.len().max(v.len()),
            });
        }
        Ok(DVector::from_fn(self.len(), |m, _| {
            self.s_nom[m] * lambda[m] * self.voltage_factor(m, v[m].norm())
        }))
    }
}

// ---------------------------------------------------------------------------
// Assembled system bundle
// ---------------------------------------------------------------------------

/// A feeder together with its assembled admittance partition, slack voltage,
/// zero-injection profile and stacked load description. Immutable after
/// construction, safe to share across concurrent solves.
#[derive(Debug, Clone)]
pub struct System {
    pub feeder: Feeder,
    pub sys: AdmittanceSystem,
    pub v0: DVector<Complex64>,
    pub w: DVector<Complex64>,
    pub zip: ZipLoadSpec,
}

impl System {
    pub fn from_feeder(feeder: Feeder) -> Result<System> {
        let sys = assemble_admittance(&feeder.nodes, &feeder.branches)?;
        let slack = feeder.slack();
        let v0 = DVector::from_iterator(slack.v_slack.len(), slack.v_slack.iter().copied());
        let w = compute_w(&sys, &v0)?;

        let nl = sys.dim_l();
        let mut a = DVector::zeros(nl);
        let mut b = DVector::zeros(nl);
        let mut c = DVector::from_element(nl, 1.0);
        let mut s_nom = DVector::from_element(nl, Complex64::new(0.0, 0.0));
        let mut v_nom = DVector::from_element(nl, 1.0);
        for node in &feeder.nodes {
            if node.kind == NodeKind::Slack {
                continue;
            }
            if let Some(zip) = &node.zip {
                for (k, p) in node.phases.phases().iter().enumerate() {
                    let m = sys
                        .index
                        .position(&node.id, *p)
                        .expect("indexed node-phase");
                    a[m] = zip.a[k];
                    b[m] = zip.b[k];
                    c[m] = zip.c[k];
                    s_nom[m] = zip.s_nom[k];
                    v_nom[m] = zip.v_nom_mag[k];
                }
            }
        }
        let zip = ZipLoadSpec::new(a, b, c, s_nom, v_nom)?;
        Ok(System {
            feeder,
            sys,
            v0,
            w,
            zip,
        })
    }

    pub fn from_json_str(text: &str) -> Result<System> {
        System::from_feeder(Feeder::from_json_str(text)?)
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<System> {
        System::from_feeder(Feeder::from_path(path)?)
    }

    pub fn dim_l(&self) -> usize {
        self.sys.dim_l()
    }

    /// Ordered map from load node-phase position to (node id, phase letter).
    pub fn labels(&self) -> Vec<(String, char)> {
        self.sys
            .index
            .l_entries()
            .iter()
            .map(|(n, p)| (n.clone(), p.letter()))
            .collect()
    }

    /// Series admittance of the branch between two single-phase nodes.
    pub fn scalar_branch_admittance(&self, from: &str, to: &str) -> Option<Complex64> {
        self.feeder
            .branches
            .iter()
            .find(|b| (b.from == from && b.to == to) || (b.from == to && b.to == from))
            .filter(|b| b.y_series.nrows() == 1)
            .map(|b| b.y_series[(0, 0)])
    }
}
