//! Multi-edge-type LDPC ensembles and a socket-respecting progressive-edge-growth
//! construction.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{stream_rng, Stream};

const MET_RATE_002: &str = include_str!("../../data/met_rate_0.02.txt");
const CANDIDATE_SAMPLES: usize = 64;

/// A node class: fraction of nodes relative to the block length and the degree
/// on each edge type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeClass {
    pub fraction: f64,
    pub degrees: Vec<usize>,
}

impl NodeClass {
    pub fn total_degree(&self) -> usize {
        self.degrees.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub name: String,
    pub edge_types: usize,
    pub variables: Vec<NodeClass>,
    pub checks: Vec<NodeClass>,
}

impl Ensemble {
    /// Single-edge-type `(dv, dc)` regular ensemble.
    pub fn regular(dv: usize, dc: usize) -> Result<Self> {
        if dv == 0 || dc == 0 {
            return Err(invalid("degree", "must be > 0"));
        }
        let e = Ensemble {
            name: format!("regular-{dv}-{dc}"),
            edge_types: 1,
            variables: vec![NodeClass {
                fraction: 1.0,
                degrees: vec![dv],
            }],
            checks: vec![NodeClass {
                fraction: dv as f64 / dc as f64,
                degrees: vec![dc],
            }],
        };
        e.validate()?;
        Ok(e)
    }

    /// The bundled rate-0.02 multi-edge ensemble.
    pub fn met_rate_002() -> Self {
        Self::parse(MET_RATE_002).expect("bundled ensemble is valid")
    }

    /// Parses the `name` / `edge_types` / `var` / `chk` text format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut name = String::from("unnamed");
        let mut edge_types = None;
        let mut variables = Vec::new();
        let mut checks = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |message: String| Error::Config {
                line: line_no,
                message,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let key = fields.next().unwrap_or_default();
            let rest: Vec<&str> = fields.collect();
            match key {
                "name" => name = rest.join(" "),
                "edge_types" => {
                    let v = rest
                        .first()
                        .and_then(|s| s.parse::<usize>().ok())
                        .filter(|&v| v > 0)
                        .ok_or_else(|| err("edge_types needs a positive integer".into()))?;
                    edge_types = Some(v);
                }
                "var" | "chk" => {
                    let types = edge_types.ok_or_else(|| err("edge_types must come first".into()))?;
                    if rest.len() != types + 1 {
                        return Err(err(format!("expected fraction and {types} degrees")));
                    }
                    let fraction: f64 = rest[0]
                        .parse()
                        .map_err(|_| err(format!("bad fraction {:?}", rest[0])))?;
                    let degrees = rest[1..]
                        .iter()
                        .map(|s| s.parse::<usize>().map_err(|_| err(format!("bad degree {s:?}"))))
                        .collect::<Result<Vec<_>>>()?;
                    let class = NodeClass { fraction, degrees };
                    if key == "var" {
                        variables.push(class);
                    } else {
                        checks.push(class);
                    }
                }
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        let e = Ensemble {
            name,
            edge_types: edge_types.ok_or_else(|| Error::Config {
                line: 0,
                message: "missing edge_types".into(),
            })?,
            variables,
            checks,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variables.is_empty() || self.checks.is_empty() {
            return Err(Error::Unsatisfiable("ensemble needs variable and check classes".into()));
        }
        for c in self.variables.iter().chain(&self.checks) {
            if c.degrees.len() != self.edge_types {
                return Err(Error::Unsatisfiable(format!(
                    "class has {} degrees for {} edge types",
                    c.degrees.len(),
                    self.edge_types
                )));
            }
            if !(c.fraction > 0.0) || c.total_degree() == 0 {
                return Err(Error::Unsatisfiable("class with zero fraction or degree".into()));
            }
        }
        let var_total: f64 = self.variables.iter().map(|c| c.fraction).sum();
        if (var_total - 1.0).abs() > 1e-9 {
            return Err(Error::Unsatisfiable(format!(
                "variable fractions sum to {var_total}, not 1"
            )));
        }
        for e in 0..self.edge_types {
            let v: f64 = self.variables.iter().map(|c| c.fraction * c.degrees[e] as f64).sum();
            let k: f64 = self.checks.iter().map(|c| c.fraction * c.degrees[e] as f64).sum();
            if (v - k).abs() > 1e-9 * v.max(1.0) {
                return Err(Error::Unsatisfiable(format!(
                    "edge type {} unbalanced: {v} variable vs {k} check sockets",
                    e + 1
                )));
            }
        }
        if self.check_fraction() >= 1.0 {
            return Err(Error::Unsatisfiable("design rate not positive".into()));
        }
        Ok(())
    }

    pub fn check_fraction(&self) -> f64 {
        self.checks.iter().map(|c| c.fraction).sum()
    }

    pub fn design_rate(&self) -> f64 {
        1.0 - self.check_fraction()
    }
}

/// A parity-check matrix in row and column adjacency form.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeSpec {
    pub n_bits: usize,
    /// `n − rank(H)`.
    pub k_bits: usize,
    pub rows: Vec<Vec<u32>>,
    pub cols: Vec<Vec<u32>>,
    pub ensemble: Option<Ensemble>,
    pub seed: u64,
}

impl CodeSpec {
    pub fn from_rows(n_bits: usize, rows: Vec<Vec<u32>>, ensemble: Option<Ensemble>, seed: u64) -> Result<Self> {
        let mut cols = vec![Vec::new(); n_bits];
        for (r, row) in rows.iter().enumerate() {
            for (i, &c) in row.iter().enumerate() {
                if c as usize >= n_bits {
                    return Err(invalid("parity rows", format!("column {c} out of range")));
                }
                if row[..i].contains(&c) {
                    return Err(invalid("parity rows", format!("double edge at row {r}, column {c}")));
                }
                cols[c as usize].push(r as u32);
            }
        }
        if let Some(c) = cols.iter().position(Vec::is_empty) {
            return Err(invalid("parity rows", format!("column {c} is empty")));
        }
        let rank = gf2_rank(n_bits, &rows);
        if rank >= n_bits {
            return Err(invalid("parity rows", "code has rate 0"));
        }
        Ok(CodeSpec {
            n_bits,
            k_bits: n_bits - rank,
            rows,
            cols,
            ensemble,
            seed,
        })
    }

    pub fn n_checks(&self) -> usize {
        self.rows.len()
    }

    pub fn n_edges(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn mother_rate(&self) -> f64 {
        self.k_bits as f64 / self.n_bits as f64
    }

    pub fn syndrome(&self, bits: &[u8]) -> Vec<u8> {
        self.rows
            .iter()
            .map(|row| row.iter().fold(0u8, |acc, &c| acc ^ bits[c as usize]))
            .collect()
    }

    pub fn column_weights(&self) -> Vec<usize> {
        self.cols.iter().map(Vec::len).collect()
    }
}

/// Splits `total` items over `fractions` by largest remainder.
fn apportion(fractions: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = fractions.iter().sum();
    let exact: Vec<f64> = fractions.iter().map(|f| f / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let missing = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

/// Builds a code of length `n_bits` from `ensemble`, deterministic in `seed`.
///
/// Node counts are rounded from the class fractions; leftover socket
/// imbalances on an edge type are absorbed by the check side. Each variable
/// socket is then connected to a free check socket of its edge type, avoiding
/// checks already adjacent to the variable (double edges are never created)
/// and, when possible, checks at distance two (four-cycles).
pub fn build_met_code(ensemble: &Ensemble, n_bits: usize, seed: u64) -> Result<CodeSpec> {
    ensemble.validate()?;
    if n_bits == 0 {
        return Err(invalid("n_bits", "must be > 0"));
    }
    let mut rng = stream_rng(seed, Stream::Construction);
    let types = ensemble.edge_types;

    let var_fracs: Vec<f64> = ensemble.variables.iter().map(|c| c.fraction).collect();
    let var_counts = apportion(&var_fracs, n_bits);
    let n_checks = (ensemble.check_fraction() * n_bits as f64).round() as usize;
    if n_checks == 0 {
        return Err(Error::Unsatisfiable("block too short for any check".into()));
    }
    let chk_fracs: Vec<f64> = ensemble.checks.iter().map(|c| c.fraction).collect();
    let chk_counts = apportion(&chk_fracs, n_checks);

    let mut var_deg: Vec<Vec<usize>> = expand(&ensemble.variables, &var_counts);
    let mut chk_deg: Vec<Vec<usize>> = expand(&ensemble.checks, &chk_counts);
    var_deg.shuffle(&mut rng);
    chk_deg.shuffle(&mut rng);

    for e in 0..types {
        balance_sockets(&var_deg, &mut chk_deg, e)?;
    }
    if let Some(v) = var_deg.iter().position(|d| d.iter().sum::<usize>() > n_checks) {
        return Err(Error::Unsatisfiable(format!(
            "variable {v} has more edges than there are checks"
        )));
    }

    let mut pools: Vec<Vec<u32>> = vec![Vec::new(); types];
    for (c, d) in chk_deg.iter().enumerate() {
        for e in 0..types {
            pools[e].extend(std::iter::repeat_n(c as u32, d[e]));
        }
    }

    let mut order: Vec<usize> = (0..n_bits).collect();
    order.sort_by_key(|&v| std::cmp::Reverse(var_deg[v].iter().sum::<usize>()));

    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n_checks];
    let mut var_adj: Vec<Vec<u32>> = vec![Vec::new(); n_bits];
    let mut own = vec![u32::MAX; n_checks];
    let mut near = vec![u32::MAX; n_checks];

    for (gen, &v) in order.iter().enumerate() {
        let gen = gen as u32;
        for e in 0..types {
            for _ in 0..var_deg[v][e] {
                let pool = &mut pools[e];
                let slot = pick_socket(pool, &own, &near, gen, &mut rng).ok_or_else(|| {
                    Error::Unsatisfiable(format!("no admissible check socket of edge type {} for variable {v}", e + 1))
                })?;
                let c = pool.swap_remove(slot);
                own[c as usize] = gen;
                near[c as usize] = gen;
                for &w in &rows[c as usize] {
                    for &c2 in &var_adj[w as usize] {
                        near[c2 as usize] = gen;
                    }
                }
                rows[c as usize].push(v as u32);
                var_adj[v].push(c);
            }
        }
    }
    for row in &mut rows {
        row.sort_unstable();
    }
    CodeSpec::from_rows(n_bits, rows, Some(ensemble.clone()), seed)
}

fn expand(classes: &[NodeClass], counts: &[usize]) -> Vec<Vec<usize>> {
    classes
        .iter()
        .zip(counts)
        .flat_map(|(c, &k)| std::iter::repeat_n(c.degrees.clone(), k))
        .collect()
}

fn balance_sockets(var_deg: &[Vec<usize>], chk_deg: &mut [Vec<usize>], e: usize) -> Result<()> {
    let v: usize = var_deg.iter().map(|d| d[e]).sum();
    let mut k: usize = chk_deg.iter().map(|d| d[e]).sum();
    let mut i = 0usize;
    let n = chk_deg.len();
    let mut stalled = 0usize;
    while k != v {
        let d = &mut chk_deg[i % n];
        i += 1;
        if k < v && d[e] > 0 {
            d[e] += 1;
            k += 1;
            stalled = 0;
        } else if k > v && d[e] > 0 && (d[e] >= 2 || d.iter().sum::<usize>() >= 2) {
            d[e] -= 1;
            k -= 1;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled > n {
                return Err(Error::Unsatisfiable(format!(
                    "cannot balance edge type {}: {v} variable vs {k} check sockets",
                    e + 1
                )));
            }
        }
    }
    Ok(())
}

fn pick_socket(pool: &[u32], own: &[u32], near: &[u32], gen: u32, rng: &mut impl Rng) -> Option<usize> {
    if pool.is_empty() {
        return None;
    }
    let mut fallback = None;
    for _ in 0..CANDIDATE_SAMPLES.min(pool.len() * 2) {
        let i = rng.random_range(0..pool.len());
        let c = pool[i] as usize;
        if own[c] == gen {
            continue;
        }
        if near[c] != gen {
            return Some(i);
        }
        fallback.get_or_insert(i);
    }
    if fallback.is_some() {
        return fallback;
    }
    let start = rng.random_range(0..pool.len());
    (0..pool.len())
        .map(|j| (start + j) % pool.len())
        .find(|&i| own[pool[i] as usize] != gen)
}

/// Rank over GF(2) of the matrix whose rows list their nonzero columns.
///
/// Rows pivoted by a column of weight one are peeled off first; the remainder
/// goes through dense bitset elimination.
pub fn gf2_rank(n_cols: usize, rows: &[Vec<u32>]) -> usize {
    let mut col_rows: Vec<Vec<u32>> = vec![Vec::new(); n_cols];
    for (r, row) in rows.iter().enumerate() {
        for &c in row {
            col_rows[c as usize].push(r as u32);
        }
    }
    let mut weight: Vec<usize> = col_rows.iter().map(Vec::len).collect();
    let mut active = vec![true; rows.len()];
    let mut stack: Vec<usize> = (0..n_cols).filter(|&c| weight[c] == 1).collect();
    let mut rank = 0;
    while let Some(c) = stack.pop() {
        if weight[c] != 1 {
            continue;
        }
        let Some(&r) = col_rows[c].iter().find(|&&r| active[r as usize]) else {
            continue;
        };
        active[r as usize] = false;
        rank += 1;
        for &c2 in &rows[r as usize] {
            let c2 = c2 as usize;
            weight[c2] -= 1;
            if weight[c2] == 1 {
                stack.push(c2);
            }
        }
    }

    let mut col_index = vec![usize::MAX; n_cols];
    let mut n_dense = 0;
    for c in 0..n_cols {
        if weight[c] > 0 {
            col_index[c] = n_dense;
            n_dense += 1;
        }
    }
    let words = n_dense.div_ceil(64);
    let mut dense: Vec<Vec<u64>> = rows
        .iter()
        .enumerate()
        .filter(|(r, _)| active[*r])
        .map(|(_, row)| {
            let mut bits = vec![0u64; words];
            for &c in row {
                let j = col_index[c as usize];
                bits[j / 64] ^= 1 << (j % 64);
            }
            bits
        })
        .collect();

    let mut pivot_row = 0;
    for j in 0..n_dense {
        let (w, b) = (j / 64, 1u64 << (j % 64));
        let Some(p) = (pivot_row..dense.len()).find(|&r| dense[r][w] & b != 0) else {
            continue;
        };
        dense.swap(pivot_row, p);
        let (head, tail) = dense.split_at_mut(pivot_row + 1);
        let pivot = &head[pivot_row];
        for row in tail.iter_mut() {
            if row[w] & b != 0 {
                for (x, y) in row[w..].iter_mut().zip(&pivot[w..]) {
                    *x ^= y;
                }
            }
        }
        pivot_row += 1;
        if pivot_row == dense.len() {
            break;
        }
    }
    rank + pivot_row
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regular_code_shape() {
        let e = Ensemble::regular(3, 6).unwrap();
        let code = build_met_code(&e, 1024, 7).unwrap();
        assert_eq!(code.n_checks(), 512);
        assert!(code.column_weights().iter().all(|&w| w == 3));
        assert!(code.rows.iter().all(|r| r.len() == 6));
        assert!((code.mother_rate() - 0.5).abs() <= 2.0 / 1024.0);
    }

    #[test]
    fn construction_is_deterministic() {
        let e = Ensemble::regular(3, 6).unwrap();
        let a = build_met_code(&e, 600, 5).unwrap();
        let b = build_met_code(&e, 600, 5).unwrap();
        let c = build_met_code(&e, 600, 6).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_ne!(a.rows, c.rows);
    }

    #[test]
    fn met_ensemble_rate() {
        let e = Ensemble::met_rate_002();
        assert!((e.design_rate() - 0.02).abs() < 1e-12);
        let n = 20_000;
        let code = build_met_code(&e, n, 1).unwrap();
        assert!((code.mother_rate() - 0.02).abs() <= 1.0 / n as f64 + 1e-12, "{}", code.mother_rate());
        for row in &code.rows {
            let mut r = row.clone();
            r.dedup();
            assert_eq!(r.len(), row.len());
        }
    }

    #[test]
    fn rank_small_oracle() {
        // rows: 110, 011, 101 -> rank 2; adding 111 -> rank 3
        let rows = vec![vec![0, 1], vec![1, 2], vec![0, 2]];
        assert_eq!(gf2_rank(3, &rows), 2);
        let mut more = rows.clone();
        more.push(vec![0, 1, 2]);
        assert_eq!(gf2_rank(3, &more), 3);
        assert_eq!(gf2_rank(4, &[vec![3], vec![3]]), 1);
    }

    #[test]
    fn ensemble_parse_errors() {
        assert!(Ensemble::parse("var 1.0 3\n").is_err());
        let unbalanced = "edge_types 1\nvar 1.0 3\nchk 0.4 6\n";
        assert!(matches!(Ensemble::parse(unbalanced), Err(Error::Unsatisfiable(_))));
        match Ensemble::parse("edge_types 1\nvar 1.0 x\n") {
            Err(Error::Config { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unsatisfiable_sockets() {
        // Degree-5 variables cannot fit into a code with three checks.
        let e = Ensemble::regular(5, 10).unwrap();
        assert!(matches!(build_met_code(&e, 6, 0), Err(Error::Unsatisfiable(_))));
    }

    #[test]
    fn from_rows_rejects_bad_structure() {
        assert!(CodeSpec::from_rows(3, vec![vec![0, 0, 1], vec![2]], None, 0).is_err());
        assert!(CodeSpec::from_rows(3, vec![vec![0, 1]], None, 0).is_err());
        assert!(CodeSpec::from_rows(2, vec![vec![0, 5]], None, 0).is_err());
    }
}
