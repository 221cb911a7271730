//! Heterochronous genealogies and their reduction to grid-cell statistics.
//!
//! A genealogy lives on a backward time axis: the most recent tip sits at
//! 0 and time increases toward the past. Sampling times and coalescent
//! times jointly partition `[0, t_root]` into intervals over which the
//! number of extant lineages is constant; integrating the coalescent
//! factor `C = k(k-1)/2` over those intervals against a regular grid
//! turns both the coalescent and the sampling log-likelihoods into plain
//! scans over per-cell sufficient statistics.

use crate::error::{Error, Result};

/// A sampled tip: opaque label plus backward sampling time.
#[derive(Debug, Clone)]
pub struct Tip {
    pub label: String,
    pub time: f64,
}

/// Rooted binary genealogy with tip sampling times and coalescent times.
///
/// Nodes `0..n` are tips, `n..2n-1` are internal; every internal node has
/// exactly two children. `node_time` is on the backward axis, so parents
/// are older than their children.
#[derive(Debug, Clone)]
pub struct Genealogy {
    n: usize,
    tips: Vec<Tip>,
    coalescent_times: Vec<f64>,
    children: Vec<Option<(usize, usize)>>,
    parent: Vec<Option<usize>>,
    node_time: Vec<f64>,
    root: usize,
}

impl Genealogy {
    /// Build and validate a genealogy from explicit topology arrays.
    pub fn from_parts(
        tips: Vec<Tip>,
        children: Vec<Option<(usize, usize)>>,
        parent: Vec<Option<usize>>,
        node_time: Vec<f64>,
        root: usize,
    ) -> Result<Self> {
        let n = tips.len();
        if n < 2 {
            return Err(Error::InvalidGenealogy("need at least 2 tips".into()));
        }
        let n_nodes = 2 * n - 1;
        if children.len() != n_nodes || parent.len() != n_nodes || node_time.len() != n_nodes {
            return Err(Error::InvalidGenealogy("topology array length mismatch".into()));
        }
        for (i, tip) in tips.iter().enumerate() {
            if tip.time < 0.0 || !tip.time.is_finite() {
                return Err(Error::InvalidGenealogy(format!(
                    "tip {} has invalid sampling time {}",
                    tip.label, tip.time
                )));
            }
            if (node_time[i] - tip.time).abs() > 0.0 {
                return Err(Error::InvalidGenealogy("tip time disagrees with node time".into()));
            }
            if children[i].is_some() {
                return Err(Error::InvalidGenealogy("tip node with children".into()));
            }
        }
        let min_tip = tips.iter().map(|t| t.time).fold(f64::INFINITY, f64::min);
        if min_tip != 0.0 {
            return Err(Error::InvalidGenealogy(format!(
                "most recent tip must be at time 0, found {min_tip}"
            )));
        }
        for v in n..n_nodes {
            let (a, b) = children[v]
                .ok_or_else(|| Error::InvalidGenealogy("internal node without children".into()))?;
            for c in [a, b] {
                if c >= n_nodes || parent[c] != Some(v) {
                    return Err(Error::InvalidGenealogy("inconsistent parent/child links".into()));
                }
                if node_time[c] > node_time[v] {
                    return Err(Error::InvalidGenealogy(
                        "child older than parent (negative branch)".into(),
                    ));
                }
            }
        }
        if parent[root].is_some() || root < n {
            return Err(Error::InvalidGenealogy("bad root".into()));
        }

        let mut coalescent_times: Vec<f64> = node_time[n..].to_vec();
        coalescent_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if coalescent_times.first().copied().unwrap_or(0.0) <= 0.0 {
            return Err(Error::InvalidGenealogy("coalescent times must be positive".into()));
        }
        let t_root = *coalescent_times.last().unwrap();
        let max_tip = tips.iter().map(|t| t.time).fold(0.0, f64::max);
        if t_root <= max_tip {
            return Err(Error::InvalidGenealogy(
                "root must be older than every sampling time".into(),
            ));
        }

        let g = Genealogy { n, tips, coalescent_times, children, parent, node_time, root };
        // Lineage-count invariant: the event sweep errors out if the count
        // ever drops below 1 before the root.
        sweep_events(&g.sampling_events(), &g.coalescent_times)?;
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tips(&self) -> &[Tip] {
        &self.tips
    }

    /// Coalescent times sorted ascending toward the past; the last entry
    /// is the root time.
    pub fn coalescent_times(&self) -> &[f64] {
        &self.coalescent_times
    }

    pub fn root_time(&self) -> f64 {
        *self.coalescent_times.last().unwrap()
    }

    /// Oldest sampling time (`s_n` in the interval notation).
    pub fn oldest_sampling_time(&self) -> f64 {
        self.tips.iter().map(|t| t.time).fold(0.0, f64::max)
    }

    /// Tip sampling times sorted ascending.
    pub fn sampling_times_sorted(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.tips.iter().map(|t| t.time).collect();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        s
    }

    /// Distinct sampling times with multiplicities, ascending.
    pub fn sampling_events(&self) -> Vec<(f64, u32)> {
        aggregate_times(&self.sampling_times_sorted())
    }

    /// Emit standard Newick with branch lengths (12 significant digits).
    pub fn to_newick(&self) -> String {
        let mut out = String::new();
        self.write_node(self.root, &mut out);
        out.push(';');
        out
    }

    fn write_node(&self, v: usize, out: &mut String) {
        match self.children[v] {
            None => out.push_str(&self.tips[v].label),
            Some((a, b)) => {
                out.push('(');
                self.write_node(a, out);
                out.push(',');
                self.write_node(b, out);
                out.push(')');
            }
        }
        if let Some(p) = self.parent[v] {
            let len = self.node_time[p] - self.node_time[v];
            out.push(':');
            out.push_str(&format_branch(len));
        }
    }
}

fn format_branch(len: f64) -> String {
    format!("{:.11e}", len)
}

fn aggregate_times(sorted: &[f64]) -> Vec<(f64, u32)> {
    let mut out: Vec<(f64, u32)> = Vec::new();
    for &t in sorted {
        match out.last_mut() {
            Some((u, k)) if *u == t => *k += 1,
            _ => out.push((t, 1)),
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Newick parsing

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

#[derive(Debug)]
struct RawNode {
    children: Vec<usize>,
    label: String,
    branch: Option<f64>,
}

impl<'a> Parser<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse { position: self.pos, message: message.into() }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected '{}'", c as char)))
        }
    }

    fn parse_subtree(&mut self, nodes: &mut Vec<RawNode>) -> Result<usize> {
        self.skip_ws();
        let mut node = RawNode { children: Vec::new(), label: String::new(), branch: None };
        if self.peek() == Some(b'(') {
            self.pos += 1;
            loop {
                let child = self.parse_subtree(nodes)?;
                node.children.push(child);
                self.skip_ws();
                match self.peek() {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return Err(self.err("expected ',' or ')'")),
                }
            }
            if node.children.len() != 2 {
                return Err(Error::InvalidGenealogy(format!(
                    "non-binary node with {} children near byte {}",
                    node.children.len(),
                    self.pos
                )));
            }
        }
        self.skip_ws();
        node.label = self.parse_label();
        self.skip_ws();
        if self.peek() == Some(b':') {
            self.pos += 1;
            node.branch = Some(self.parse_number()?);
        }
        nodes.push(node);
        Ok(nodes.len() - 1)
    }

    fn parse_label(&mut self) -> String {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || matches!(c, b'_' | b'.' | b'-' | b'|' | b'/' | b'#') {
                self.pos += 1;
            } else {
                break;
            }
        }
        String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned()
    }

    fn parse_number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || matches!(c, b'.' | b'e' | b'E' | b'+' | b'-') {
                self.pos += 1;
            } else {
                break;
            }
        }
        if start == self.pos {
            return Err(self.err("expected a number"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| self.err("malformed number"))
    }
}

/// Parse a Newick string into a validated genealogy.
///
/// Tip sampling times are geometry-derived: every node's depth from the
/// root is accumulated from branch lengths, and the deepest tip defines
/// the present (time 0). Labels are carried as opaque text.
pub fn parse_newick(text: &str) -> Result<Genealogy> {
    let mut parser = Parser { bytes: text.as_bytes(), pos: 0 };
    let mut raw: Vec<RawNode> = Vec::new();
    let root_raw = parser.parse_subtree(&mut raw)?;
    parser.skip_ws();
    parser.expect(b';')?;
    parser.skip_ws();
    if parser.pos != parser.bytes.len() {
        return Err(parser.err("trailing characters after ';'"));
    }

    for node in &raw {
        if let Some(b) = node.branch {
            if b < 0.0 || !b.is_finite() {
                return Err(Error::InvalidGenealogy(format!("negative branch length {b}")));
            }
        }
    }
    if raw[root_raw].children.is_empty() {
        return Err(Error::InvalidGenealogy("single-leaf tree".into()));
    }

    // Depths from the root, then flip to the backward axis.
    let mut depth = vec![0.0_f64; raw.len()];
    let mut stack = vec![root_raw];
    let mut order = Vec::with_capacity(raw.len());
    while let Some(v) = stack.pop() {
        order.push(v);
        for &c in &raw[v].children {
            let b = raw[c].branch.ok_or_else(|| Error::Parse {
                position: 0,
                message: format!("missing branch length on node '{}'", raw[c].label),
            })?;
            depth[c] = depth[v] + b;
            stack.push(c);
        }
    }
    let max_depth = order
        .iter()
        .filter(|&&v| raw[v].children.is_empty())
        .map(|&v| depth[v])
        .fold(f64::NEG_INFINITY, f64::max);

    // Renumber: tips first, then internal nodes.
    let n_tips = raw.iter().filter(|r| r.children.is_empty()).count();
    let mut index = vec![usize::MAX; raw.len()];
    let (mut next_tip, mut next_int) = (0, n_tips);
    for v in 0..raw.len() {
        if raw[v].children.is_empty() {
            index[v] = next_tip;
            next_tip += 1;
        } else {
            index[v] = next_int;
            next_int += 1;
        }
    }

    let n_nodes = raw.len();
    let mut tips = vec![Tip { label: String::new(), time: 0.0 }; n_tips];
    let mut children = vec![None; n_nodes];
    let mut parent = vec![None; n_nodes];
    let mut node_time = vec![0.0; n_nodes];
    for v in 0..n_nodes {
        let i = index[v];
        node_time[i] = max_depth - depth[v];
        if raw[v].children.is_empty() {
            tips[i] = Tip { label: raw[v].label.clone(), time: node_time[i] };
        } else {
            let (a, b) = (index[raw[v].children[0]], index[raw[v].children[1]]);
            children[i] = Some((a, b));
            parent[a] = Some(i);
            parent[b] = Some(i);
        }
    }
    Genealogy::from_parts(tips, children, parent, node_time, index[root_raw])
}

// ---------------------------------------------------------------------------
// Interval decomposition

/// One interval of the event-sweep partition of `[0, t_root]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepInterval {
    pub start: f64,
    pub end: f64,
    pub lineages: u32,
    pub ends_in_coalescence: bool,
}

impl SweepInterval {
    /// Coalescent factor `C = k(k-1)/2` for this interval.
    pub fn coal_factor(&self) -> f64 {
        binom2(self.lineages)
    }
}

pub fn binom2(k: u32) -> f64 {
    (k as f64) * (k as f64 - 1.0) / 2.0
}

/// The intervals delimited by sampling and coalescent events, with the
/// extant-lineage count on each.
#[derive(Debug, Clone)]
pub struct IntervalDecomposition {
    pub intervals: Vec<SweepInterval>,
}

impl IntervalDecomposition {
    /// Total coalescent-factor exposure, summed directly over intervals.
    pub fn total_exposure(&self) -> f64 {
        self.intervals.iter().map(|i| i.coal_factor() * (i.end - i.start)).sum()
    }
}

/// Backward sweep over merged sampling/coalescent events. At equal times
/// sampling is processed before coalescence, which keeps the lineage
/// count positive and is measure-zero under the model.
fn sweep_events(samp: &[(f64, u32)], coal: &[f64]) -> Result<Vec<SweepInterval>> {
    let mut intervals = Vec::with_capacity(samp.len() + coal.len());
    let mut active: i64 = 0;
    let mut prev = 0.0_f64;
    let (mut si, mut ci) = (0usize, 0usize);
    while si < samp.len() || ci < coal.len() {
        let take_sample = match (samp.get(si), coal.get(ci)) {
            (Some(&(ts, _)), Some(&tc)) => ts <= tc,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => unreachable!(),
        };
        let t = if take_sample { samp[si].0 } else { coal[ci] };
        if t > prev {
            if active < 1 {
                return Err(Error::InvalidGenealogy(format!(
                    "no extant lineage on ({prev}, {t})"
                )));
            }
            intervals.push(SweepInterval {
                start: prev,
                end: t,
                lineages: active as u32,
                ends_in_coalescence: !take_sample,
            });
            prev = t;
        }
        if take_sample {
            active += samp[si].1 as i64;
            si += 1;
        } else {
            if active < 2 {
                return Err(Error::InvalidGenealogy(format!(
                    "coalescence at {t} with fewer than 2 lineages"
                )));
            }
            active -= 1;
            ci += 1;
        }
    }
    if active != 1 {
        return Err(Error::InvalidGenealogy(format!(
            "{active} lineages left at the root"
        )));
    }
    Ok(intervals)
}

/// Decompose a genealogy into lineage-count intervals.
pub fn decompose_intervals(g: &Genealogy) -> Result<IntervalDecomposition> {
    let intervals = sweep_events(&g.sampling_events(), g.coalescent_times())?;
    Ok(IntervalDecomposition { intervals })
}

// ---------------------------------------------------------------------------
// Grid

/// Regular grid over `[0, t_root]`. `m_prime` is the number of leading
/// cells on which the sampling intensity field is defined.
#[derive(Debug, Clone)]
pub struct Grid {
    boundaries: Vec<f64>,
    m: usize,
    m_prime: usize,
}

impl Grid {
    /// Uniform grid with `m` cells spanning `[0, g.root_time()]`.
    ///
    /// `m_prime` is the smallest cell count whose upper boundary lies past
    /// the oldest sampling time, clamped to `m - 1`: the sampling field is
    /// not modeled after the last sample.
    pub fn build(g: &Genealogy, m: usize) -> Result<Grid> {
        if m < 2 {
            return Err(Error::InvalidArgument(format!("grid needs m >= 2, got {m}")));
        }
        let t_root = g.root_time();
        let boundaries: Vec<f64> = (0..=m).map(|i| t_root * i as f64 / m as f64).collect();
        Ok(Self::from_boundaries(boundaries, g.oldest_sampling_time()))
    }

    /// Grid from explicit boundaries (ascending, starting at 0).
    pub fn from_boundaries(boundaries: Vec<f64>, oldest_sample: f64) -> Grid {
        assert!(boundaries.len() >= 2, "need at least one cell");
        let m = boundaries.len() - 1;
        let mut m_prime = m;
        for c in 0..m {
            if boundaries[c + 1] > oldest_sample {
                m_prime = c + 1;
                break;
            }
        }
        if m_prime >= m {
            m_prime = m.saturating_sub(1);
        }
        Grid { boundaries, m, m_prime }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn m_prime(&self) -> usize {
        self.m_prime
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn widths(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.boundaries[i + 1] - self.boundaries[i]).collect()
    }

    pub fn span(&self) -> f64 {
        *self.boundaries.last().unwrap()
    }

    /// Cell index of an event time under the `(k_i, k_{i+1}]` convention,
    /// with the first cell closed at 0.
    pub fn cell_of(&self, t: f64) -> usize {
        if t <= self.boundaries[0] {
            return 0;
        }
        let idx = self.boundaries.partition_point(|&b| b < t);
        idx.saturating_sub(1).min(self.m - 1)
    }
}

// ---------------------------------------------------------------------------
// Grid statistics

/// Per-cell sufficient statistics that make both likelihoods linear scans,
/// plus per-coalescent-event terms for the pointwise (WAIC) factorization.
#[derive(Debug, Clone)]
pub struct GridStats {
    pub m: usize,
    pub m_prime: usize,
    /// Cell widths (all `m` cells).
    pub widths: Vec<f64>,
    /// Integral of the coalescent factor over each cell.
    pub coal_exposure: Vec<f64>,
    /// Number of coalescent events per cell.
    pub coal_events: Vec<u32>,
    /// Number of sampling events per cell, first `m_prime` cells only.
    pub samp_count: Vec<u32>,
    /// Cell index of each coalescent event, ascending in time.
    pub event_cells: Vec<usize>,
    /// `log C` of the interval ending at each coalescent event.
    pub event_log_factor: Vec<f64>,
    /// Sparse `(cell, factor * overlap)` exposure between consecutive
    /// coalescent events; row `k` covers the stretch ending at event `k`.
    pub event_exposures: Vec<Vec<(usize, f64)>>,
    pub n_tips: usize,
    /// Sampling events past the last sampling-field cell (nonzero only
    /// when `m_prime` was clamped).
    pub dropped_samples: usize,
}

impl GridStats {
    /// The theta-independent constant `sum_k log C_{0,k-1}` of the
    /// coalescent density.
    pub fn log_factor_sum(&self) -> f64 {
        self.event_log_factor.iter().sum()
    }
}

/// Accumulate interval exposures, coalescent-event counts and sampling
/// counts on the grid. Exposures are exact piecewise overlaps.
pub fn summarize_grid(
    d: &IntervalDecomposition,
    grid: &Grid,
    samples: &[f64],
) -> Result<GridStats> {
    let m = grid.m();
    let m_prime = grid.m_prime();
    let last = grid.span();
    let tol = 1e-9 * last.max(1.0);

    let mut coal_exposure = vec![0.0; m];
    let mut coal_events = vec![0u32; m];
    let mut samp_count = vec![0u32; m_prime];
    let mut event_cells = Vec::new();
    let mut event_log_factor = Vec::new();
    let mut event_exposures: Vec<Vec<(usize, f64)>> = vec![Vec::new()];

    for iv in &d.intervals {
        if iv.end > last + tol {
            return Err(Error::Range(format!(
                "interval end {} beyond grid end {last}",
                iv.end
            )));
        }
        let factor = iv.coal_factor();
        let mut cur = iv.start;
        let mut c = grid.boundaries().partition_point(|&b| b <= cur).saturating_sub(1);
        c = c.min(m - 1);
        let end = iv.end.min(last);
        while cur < end {
            let cell_hi = grid.boundaries()[c + 1];
            let seg_end = end.min(cell_hi);
            if factor > 0.0 && seg_end > cur {
                let w = factor * (seg_end - cur);
                coal_exposure[c] += w;
                let row = event_exposures.last_mut().unwrap();
                match row.iter_mut().find(|(cc, _)| *cc == c) {
                    Some((_, acc)) => *acc += w,
                    None => row.push((c, w)),
                }
            }
            cur = seg_end;
            if cur >= cell_hi && c + 1 < m {
                c += 1;
            } else if cur >= end {
                break;
            }
        }
        if iv.ends_in_coalescence {
            let cell = grid.cell_of(iv.end);
            coal_events[cell] += 1;
            event_cells.push(cell);
            event_log_factor.push(factor.ln());
            event_exposures.push(Vec::new());
        }
    }
    // The trailing row opened after the root event is always empty.
    event_exposures.pop();

    let mut dropped = 0usize;
    for &s in samples {
        if s > last + tol {
            return Err(Error::Range(format!("sampling time {s} beyond grid end {last}")));
        }
        let cell = grid.cell_of(s);
        if cell < m_prime {
            samp_count[cell] += 1;
        } else {
            dropped += 1;
        }
    }

    Ok(GridStats {
        m,
        m_prime,
        widths: grid.widths(),
        coal_exposure,
        coal_events,
        samp_count,
        event_cells,
        event_log_factor,
        event_exposures,
        n_tips: samples.len(),
        dropped_samples: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn parse_isochronous_depths() {
        let g = parse_newick("((A:1.0,B:1.0):0.5,C:1.5);").unwrap();
        assert_eq!(g.n(), 3);
        let mut times: Vec<f64> = g.tips().iter().map(|t| t.time).collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(times, vec![0.0, 0.0, 0.0]);
        assert_eq!(g.coalescent_times(), &[1.0, 1.5]);
    }

    #[test]
    fn parse_heterochronous_depths() {
        let g = parse_newick("((A:1.0,B:0.5):0.5,C:1.5);").unwrap();
        let time_of = |label: &str| {
            g.tips().iter().find(|t| t.label == label).map(|t| t.time).unwrap()
        };
        assert_eq!(time_of("A"), 0.0);
        assert_eq!(time_of("B"), 0.5);
        assert_eq!(time_of("C"), 0.0);
        assert_eq!(g.coalescent_times(), &[1.0, 1.5]);
    }

    #[test]
    fn parse_reports_position_on_malformed_input() {
        let err = parse_newick("((A:1.0,B:1.0:0.5,C:1.5);").unwrap_err();
        match err {
            Error::Parse { position, .. } => assert!(position > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_non_binary() {
        let err = parse_newick("(A:1.0,B:1.0,C:1.0);").unwrap_err();
        assert!(matches!(err, Error::InvalidGenealogy(_)), "{err:?}");
    }

    #[test]
    fn parse_rejects_negative_branch() {
        let err = parse_newick("(A:1.0,B:-0.5);").unwrap_err();
        assert!(matches!(err, Error::InvalidGenealogy(_)), "{err:?}");
    }

    #[test]
    fn roundtrip_small_tree() {
        let g = parse_newick("((A:1.0,B:0.5):0.5,C:1.5);").unwrap();
        let g2 = parse_newick(&g.to_newick()).unwrap();
        let mut a = g.sampling_times_sorted();
        let mut b = g2.sampling_times_sorted();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert_close(*x, *y, 1e-12);
        }
        for (x, y) in g.coalescent_times().iter().zip(g2.coalescent_times()) {
            assert_close(*x, *y, 1e-12);
        }
    }

    #[test]
    fn decompose_two_tips() {
        let g = parse_newick("(A:1.0,B:1.0);").unwrap();
        let d = decompose_intervals(&g).unwrap();
        assert_eq!(d.intervals.len(), 1);
        let iv = &d.intervals[0];
        assert_eq!((iv.start, iv.end, iv.lineages), (0.0, 1.0, 2));
        assert!(iv.ends_in_coalescence);
        assert_eq!(iv.coal_factor(), 1.0);
    }

    #[test]
    fn decompose_splits_at_sampling_events() {
        // Seven tips sampled at 4 times with multiplicities (1,2,2,2); the
        // stretch between the two oldest coalescent events contains the
        // oldest sampling time and must split there.
        let samp = vec![(0.0, 1), (1.0, 2), (2.0, 2), (3.5, 2)];
        let coal = vec![0.5, 1.5, 2.5, 3.0, 4.0, 5.0];
        let ivs = sweep_events(&samp, &coal).unwrap();
        // (t_6=3.0, t_5=4.0) holds s_4=3.5: expect [3.0,3.5) then [3.5,4.0).
        let i = ivs.iter().position(|iv| iv.start == 3.0).unwrap();
        assert_eq!((ivs[i].start, ivs[i].end), (3.0, 3.5));
        assert!(!ivs[i].ends_in_coalescence);
        assert_eq!((ivs[i + 1].start, ivs[i + 1].end), (3.5, 4.0));
        assert!(ivs[i + 1].ends_in_coalescence);
        assert_eq!(ivs[i + 1].lineages, ivs[i].lineages + 2);
        // Partition of [0, t_root] with shared endpoints.
        assert_eq!(ivs[0].start, 0.0);
        assert_eq!(ivs.last().unwrap().end, 5.0);
        for w in ivs.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
    }

    #[test]
    fn sweep_rejects_starved_lineages() {
        // Coalescence before the second sample arrives.
        let samp = vec![(0.0, 1), (2.0, 2)];
        let coal = vec![1.0, 3.0];
        assert!(sweep_events(&samp, &coal).is_err());
    }

    /// Deterministic pseudo-random heterochronous configuration: tips
    /// arrive one by one and coalescences interleave whenever at least two
    /// lineages are active.
    fn random_config(n: usize, seed: u64) -> (Vec<(f64, u32)>, Vec<f64>) {
        let mut state = seed.max(1);
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut samp = vec![(0.0, 1u32)];
        let mut coal = Vec::new();
        let mut t = 0.0;
        let mut active = 1i64;
        let mut sampled = 1;
        while coal.len() < n - 1 {
            t += 0.01 + next() * 0.2;
            if sampled < n && (active < 2 || next() < 0.5) {
                samp.push((t, 1));
                sampled += 1;
                active += 1;
            } else if active >= 2 {
                coal.push(t);
                active -= 1;
            }
        }
        (samp, coal)
    }

    #[test]
    fn sweep_randomized_lineage_accounting() {
        let (samp, coal) = random_config(100, 42);
        let ivs = sweep_events(&samp, &coal).unwrap();
        // Net lineage change over the sweep: +n from samples, -(n-1) from
        // coalescences, leaving exactly one lineage at the root.
        let n: u32 = samp.iter().map(|&(_, k)| k).sum();
        assert_eq!(n, 100);
        assert_eq!(coal.len() as u32, n - 1);
        assert!(ivs.iter().all(|iv| iv.lineages >= 1));
        for iv in &ivs {
            if iv.ends_in_coalescence {
                assert!(iv.lineages >= 2);
            }
        }
        assert_eq!(ivs.last().unwrap().end, *coal.last().unwrap());
    }

    #[test]
    fn grid_uniform_boundaries() {
        let g = parse_newick("(A:1.0,B:1.0);").unwrap();
        let grid = Grid::build(&g, 4).unwrap();
        assert_eq!(grid.boundaries(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(grid.m(), 4);
    }

    #[test]
    fn grid_m_prime_definition() {
        // t_root=1, oldest sample 0.6, M=4: cell (0.5, 0.75] is the first
        // whose upper boundary exceeds 0.6.
        let grid = Grid::from_boundaries(vec![0.0, 0.25, 0.5, 0.75, 1.0], 0.6);
        assert_eq!(grid.m_prime(), 3);
    }

    #[test]
    fn grid_m_prime_clamped() {
        let grid = Grid::from_boundaries(vec![0.0, 0.25, 0.5, 0.75, 1.0], 0.99);
        assert_eq!(grid.m_prime(), 3);
    }

    #[test]
    fn grid_rejects_small_m() {
        let g = parse_newick("(A:1.0,B:1.0);").unwrap();
        assert!(matches!(Grid::build(&g, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn stats_two_tips_single_cell() {
        let g = parse_newick("(A:1.0,B:1.0);").unwrap();
        let d = decompose_intervals(&g).unwrap();
        let grid = Grid::from_boundaries(vec![0.0, 1.0], 0.0);
        let stats = summarize_grid(&d, &grid, &g.sampling_times_sorted()).unwrap();
        assert_eq!(stats.coal_exposure, vec![1.0]);
        assert_eq!(stats.coal_events, vec![1]);
        assert_eq!(stats.samp_count, vec![2]);
        assert_eq!(stats.event_cells, vec![0]);
        assert_eq!(stats.event_log_factor, vec![0.0]);
    }

    #[test]
    fn stats_piecewise_overlap() {
        // n=3 isochronous, t=(0.5, 1.2), two cells over [0, 1.2].
        let g = parse_newick("((A:0.5,B:0.5):0.7,C:1.2);").unwrap();
        let d = decompose_intervals(&g).unwrap();
        let grid = Grid::from_boundaries(vec![0.0, 0.6, 1.2], 0.0);
        let stats = summarize_grid(&d, &grid, &g.sampling_times_sorted()).unwrap();
        assert_close(stats.coal_exposure[0], 3.0 * 0.5 + 1.0 * 0.1, 1e-12);
        assert_close(stats.coal_exposure[1], 0.6, 1e-12);
        assert_eq!(stats.coal_events, vec![1, 1]);
        assert_eq!(stats.samp_count, vec![3]);
    }

    #[test]
    fn stats_match_pointwise_quadrature() {
        // Exposures must equal the integral of C(t) over each cell, where
        // C(t) is evaluated independently by counting events up to t.
        let (samp, coal) = random_config(300, 7);
        let ivs = sweep_events(&samp, &coal).unwrap();
        let d = IntervalDecomposition { intervals: ivs };
        let t_root = *coal.last().unwrap();
        let m = 17;
        let boundaries: Vec<f64> = (0..=m).map(|i| t_root * i as f64 / m as f64).collect();
        let grid = Grid::from_boundaries(boundaries.clone(), samp.last().unwrap().0);
        let samples: Vec<f64> = samp
            .iter()
            .flat_map(|&(t, k)| std::iter::repeat(t).take(k as usize))
            .collect();
        let stats = summarize_grid(&d, &grid, &samples).unwrap();

        let lineages_at = |t: f64| -> f64 {
            let s: u32 = samp.iter().filter(|&&(u, _)| u <= t).map(|&(_, k)| k).sum();
            let c = coal.iter().filter(|&&u| u <= t).count() as u32;
            binom2(s - c)
        };
        for cell in 0..m {
            // Exact quadrature of the step function C(t): split the cell at
            // every event time and evaluate C at sub-interval midpoints.
            let (lo, hi) = (boundaries[cell], boundaries[cell + 1]);
            let mut cuts = vec![lo];
            for &(t, _) in &samp {
                if t > lo && t < hi {
                    cuts.push(t);
                }
            }
            for &t in &coal {
                if t > lo && t < hi {
                    cuts.push(t);
                }
            }
            cuts.push(hi);
            cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let integral: f64 = cuts
                .windows(2)
                .map(|w| lineages_at(0.5 * (w[0] + w[1])) * (w[1] - w[0]))
                .sum();
            assert_close(stats.coal_exposure[cell], integral, 1e-10);
        }

        // Partition property and count invariants.
        let total: f64 = stats.coal_exposure.iter().sum();
        assert_close(total, d.total_exposure(), 1e-9);
        assert_eq!(stats.coal_events.iter().map(|&e| e as usize).sum::<usize>(), 299);
        assert_eq!(stats.samp_count.iter().map(|&e| e as usize).sum::<usize>(), 300);
        // Per-event exposure rows tile the per-cell totals.
        let mut by_cell = vec![0.0; m];
        for row in &stats.event_exposures {
            for &(c, w) in row {
                by_cell[c] += w;
            }
        }
        for cell in 0..m {
            assert_close(by_cell[cell], stats.coal_exposure[cell], 1e-9);
        }
    }

    #[test]
    fn stats_reject_events_beyond_grid() {
        let g = parse_newick("(A:1.0,B:1.0);").unwrap();
        let d = decompose_intervals(&g).unwrap();
        let grid = Grid::from_boundaries(vec![0.0, 0.5], 0.0);
        assert!(matches!(
            summarize_grid(&d, &grid, &g.sampling_times_sorted()),
            Err(Error::Range(_))
        ));
    }
}
