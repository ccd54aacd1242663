use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

const GRADIENT_TOLERANCE: f64 = 1e-10;
const MAX_ITERATIONS: usize = 200;
const STEP_TOLERANCE: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Originality,
    Harmony,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Originality => "originality",
            Criterion::Harmony => "harmony",
        })
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "originality" => Ok(Criterion::Originality),
            "harmony" => Ok(Criterion::Harmony),
            other => Err(Error::Data(format!("unknown criterion {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub item_a: String,
    pub item_b: String,
    pub winner: String,
    pub criterion: Criterion,
}

impl PairwiseComparison {
    pub fn new(item_a: &str, item_b: &str, winner: &str, criterion: Criterion) -> Result<Self> {
        if winner != item_a && winner != item_b {
            return Err(Error::Data(format!(
                "winner {winner:?} is neither {item_a:?} nor {item_b:?}"
            )));
        }
        Ok(Self {
            item_a: item_a.to_owned(),
            item_b: item_b.to_owned(),
            winner: winner.to_owned(),
            criterion,
        })
    }

    fn loser(&self) -> &str {
        if self.winner == self.item_a {
            &self.item_b
        } else {
            &self.item_a
        }
    }
}

#[derive(Deserialize)]
struct ComparisonRow {
    item_a: String,
    item_b: String,
    winner: String,
    criterion: String,
}

/// Read comparisons from delimited text with an `item_a, item_b, winner, criterion`
/// header. The delimiter is a tab when the header contains one, a comma otherwise.
pub fn read_comparisons<R: Read>(mut reader: R) -> Result<Vec<PairwiseComparison>> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let header = text.lines().next().unwrap_or_default();
    let delimiter = if header.contains('\t') { b'\t' } else { b',' };
    let mut csv = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in csv.deserialize::<ComparisonRow>().enumerate() {
        let row = row.map_err(|e| Error::Data(format!("comparison row {}: {e}", i + 2)))?;
        out.push(PairwiseComparison::new(
            &row.item_a,
            &row.item_b,
            &row.winner,
            row.criterion.parse()?,
        )?);
    }
    Ok(out)
}

/// Wald test of one skill difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub method_a: String,
    pub method_b: String,
    /// θ_a − θ_b.
    pub difference: f64,
    pub standard_error: f64,
    pub z: f64,
    /// Two-sided.
    pub p_value: f64,
    pub stars: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillEstimate {
    pub methods: Vec<String>,
    pub theta: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub pairwise: Vec<PairwiseTest>,
    /// Methods with neither wins nor losses.
    pub excluded: Vec<String>,
    pub iterations: usize,
}

impl SkillEstimate {
    pub fn theta_of(&self, method: &str) -> Option<f64> {
        self.methods.iter().position(|m| m == method).map(|i| self.theta[i])
    }
}

/// `*` < .05, `**` < .01, `***` < .001, `****` < 1e-4, `ns` otherwise.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 1e-4 {
        "****"
    } else if p < 1e-3 {
        "***"
    } else if p < 1e-2 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        "ns"
    }
}

fn reachable(start: usize, adjacent: &[Vec<usize>]) -> Vec<bool> {
    let mut seen = vec![false; adjacent.len()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(i) = stack.pop() {
        for &j in &adjacent[i] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}

/// Maximum-likelihood Bradley–Terry skills with Σθ = 0.
///
/// Newton iterations on the log-likelihood, solving with the Fisher information
/// plus `11ᵀ/n` so steps stay in the zero-sum subspace. Standard errors come from
/// the pseudo-inverse of the Fisher information. Comparisons of a method against
/// itself carry no information and are skipped.
pub fn fit_bradley_terry(comparisons: &[PairwiseComparison]) -> Result<SkillEstimate> {
    let mut all: BTreeSet<&str> = BTreeSet::new();
    let mut active: BTreeSet<&str> = BTreeSet::new();
    for c in comparisons {
        all.insert(&c.item_a);
        all.insert(&c.item_b);
        if c.item_a != c.item_b {
            active.insert(&c.item_a);
            active.insert(&c.item_b);
        }
    }
    let excluded: Vec<String> = all.difference(&active).map(|s| s.to_string()).collect();
    for m in &excluded {
        log::warn!("method {m:?} has no wins or losses and is excluded");
    }
    let methods: Vec<String> = active.iter().map(|s| s.to_string()).collect();
    let n = methods.len();
    if n < 2 {
        return Err(Error::Fitting("need comparisons between at least two methods".into()));
    }
    let index: BTreeMap<&str, usize> = methods.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();

    let mut wins = DMatrix::<f64>::zeros(n, n);
    for c in comparisons.iter().filter(|c| c.item_a != c.item_b) {
        wins[(index[c.winner.as_str()], index[c.loser()])] += 1.0;
    }

    let undirected: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| wins[(i, j)] + wins[(j, i)] > 0.0).collect())
        .collect();
    let seen = reachable(0, &undirected);
    if seen.iter().any(|s| !s) {
        let mut components: Vec<Vec<String>> = Vec::new();
        let mut assigned = vec![false; n];
        for i in 0..n {
            if !assigned[i] {
                let comp = reachable(i, &undirected);
                let members: Vec<String> = (0..n).filter(|&j| comp[j]).map(|j| methods[j].clone()).collect();
                for j in (0..n).filter(|&j| comp[j]) {
                    assigned[j] = true;
                }
                components.push(members);
            }
        }
        return Err(Error::Fitting(format!(
            "comparison graph is disconnected: components {components:?}"
        )));
    }
    let beats: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| wins[(i, j)] > 0.0).collect()).collect();
    let beaten_by: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| wins[(j, i)] > 0.0).collect()).collect();
    if reachable(0, &beats).iter().any(|s| !s) || reachable(0, &beaten_by).iter().any(|s| !s) {
        return Err(Error::Fitting(
            "no finite maximum-likelihood estimate: some group of methods never loses to the rest".into(),
        ));
    }

    let log_likelihood = |theta: &DVector<f64>| -> f64 {
        let mut ll = 0.0;
        for i in 0..n {
            for j in 0..n {
                let w = wins[(i, j)];
                if w > 0.0 {
                    let d = theta[i] - theta[j];
                    ll -= w * (-d).exp().ln_1p();
                }
            }
        }
        ll
    };
    let ones = DMatrix::<f64>::from_element(n, n, 1.0 / n as f64);
    let gradient_and_fisher = |theta: &DVector<f64>| -> (DVector<f64>, DMatrix<f64>) {
        let mut g = DVector::zeros(n);
        let mut f = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let games = wins[(i, j)] + wins[(j, i)];
                if games == 0.0 {
                    continue;
                }
                let p = 1.0 / (1.0 + (theta[j] - theta[i]).exp());
                g[i] += wins[(i, j)] - games * p;
                let info = games * p * (1.0 - p);
                f[(i, i)] += info;
                f[(i, j)] -= info;
            }
        }
        (g, f)
    };

    // The gradient is a sum over games, so its rounding floor grows with the game count.
    let tolerance = GRADIENT_TOLERANCE * wins.sum().max(1.0);
    let mut theta = DVector::<f64>::zeros(n);
    let mut iterations = 0;
    loop {
        let (g, f) = gradient_and_fisher(&theta);
        if g.norm() < tolerance {
            break;
        }
        if iterations == MAX_ITERATIONS {
            return Err(Error::Fitting(format!(
                "no convergence after {MAX_ITERATIONS} iterations (gradient norm {:e})",
                g.norm()
            )));
        }
        iterations += 1;
        let step = (f + &ones)
            .lu()
            .solve(&g)
            .ok_or_else(|| Error::Fitting("singular Fisher information".into()))?;
        if step.amax() < STEP_TOLERANCE {
            break;
        }
        // Near the optimum likelihood changes fall below rounding; only backtrack on real decreases.
        let floor = log_likelihood(&theta) - 1e-12 * (1.0 + log_likelihood(&theta).abs());
        let mut scale = 1.0;
        let mut next = &theta + &step;
        while log_likelihood(&next) < floor && scale > 1e-8 {
            scale *= 0.5;
            next = &theta + &step * scale;
        }
        let mean = next.mean();
        theta = next.add_scalar(-mean);
    }

    let (_, fisher) = gradient_and_fisher(&theta);
    let covariance = (fisher + &ones)
        .try_inverse()
        .ok_or_else(|| Error::Fitting("singular Fisher information".into()))?
        - &ones;
    let standard_errors: Vec<f64> = (0..n).map(|i| covariance[(i, i)].max(0.0).sqrt()).collect();

    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut pairwise = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let difference = theta[a] - theta[b];
            let var = covariance[(a, a)] + covariance[(b, b)] - 2.0 * covariance[(a, b)];
            let standard_error = var.max(0.0).sqrt();
            let z = difference / standard_error;
            let p_value = 2.0 * (1.0 - normal.cdf(z.abs()));
            pairwise.push(PairwiseTest {
                method_a: methods[a].clone(),
                method_b: methods[b].clone(),
                difference,
                standard_error,
                z,
                p_value,
                stars: significance_stars(p_value).to_owned(),
            });
        }
    }

    // Centering leaves rounding residue; closing on the last entry makes a left-to-right sum exactly 0.
    let mut theta: Vec<f64> = theta.iter().copied().collect();
    let rest: f64 = theta[..n - 1].iter().sum();
    theta[n - 1] = -rest;

    Ok(SkillEstimate {
        methods,
        theta,
        standard_errors,
        pairwise,
        excluded,
        iterations,
    })
}

/// Fit each criterion separately.
pub fn fit_by_criterion(comparisons: &[PairwiseComparison]) -> Result<BTreeMap<Criterion, SkillEstimate>> {
    let mut grouped: BTreeMap<Criterion, Vec<PairwiseComparison>> = BTreeMap::new();
    for c in comparisons {
        grouped.entry(c.criterion).or_default().push(c.clone());
    }
    grouped
        .into_iter()
        .map(|(k, v)| Ok((k, fit_bradley_terry(&v)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cmp(a: &str, b: &str, w: &str) -> PairwiseComparison {
        PairwiseComparison::new(a, b, w, Criterion::Originality).unwrap()
    }

    #[test]
    fn two_player_closed_form() {
        let data = vec![cmp("a", "b", "a"), cmp("a", "b", "a"), cmp("b", "a", "a"), cmp("a", "b", "b")];
        let fit = fit_bradley_terry(&data).unwrap();
        let d = fit.theta_of("a").unwrap() - fit.theta_of("b").unwrap();
        assert!((d - 3f64.ln()).abs() < 1e-9, "{d}");
        assert!(fit.theta.iter().sum::<f64>().abs() < 1e-12);
        // Var(θa − θb) = 1 / (n p (1 − p)) = 1 / (4 · 3/16).
        let se = fit.pairwise[0].standard_error;
        assert!((se * se - 4.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn balanced_round_robin_is_zero() {
        let data = vec![cmp("a", "b", "a"), cmp("b", "c", "b"), cmp("c", "a", "c")];
        let fit = fit_bradley_terry(&data).unwrap();
        assert!(fit.theta.iter().all(|t| t.abs() < 1e-12));
    }

    #[test]
    fn degenerate_graphs_rejected() {
        let disconnected = vec![cmp("a", "b", "a"), cmp("a", "b", "b"), cmp("c", "d", "c"), cmp("c", "d", "d")];
        let err = fit_bradley_terry(&disconnected).unwrap_err().to_string();
        assert!(err.contains("disconnected"), "{err}");
        assert!(fit_bradley_terry(&[cmp("a", "b", "a")]).is_err());
    }

    #[test]
    fn self_comparisons_excluded() {
        let data = vec![cmp("a", "b", "a"), cmp("a", "b", "b"), cmp("z", "z", "z")];
        let fit = fit_bradley_terry(&data).unwrap();
        assert_eq!(fit.excluded, ["z"]);
        assert_eq!(fit.methods, ["a", "b"]);
    }

    #[test]
    fn reads_tsv_and_csv() {
        let tsv = "item_a\titem_b\twinner\tcriterion\ncas\trandom\tcas\toriginality\n";
        let csv = "item_a,item_b,winner,criterion\ncas,random,random,Harmony\n";
        assert_eq!(read_comparisons(tsv.as_bytes()).unwrap()[0].winner, "cas");
        assert_eq!(read_comparisons(csv.as_bytes()).unwrap()[0].criterion, Criterion::Harmony);
        assert!(read_comparisons("item_a,item_b,winner,criterion\na,b,c,harmony\n".as_bytes()).is_err());
    }

    #[test]
    fn stars() {
        assert_eq!(significance_stars(0.2), "ns");
        assert_eq!(significance_stars(0.04), "*");
        assert_eq!(significance_stars(0.009), "**");
        assert_eq!(significance_stars(0.0009), "***");
        assert_eq!(significance_stars(0.00009), "****");
    }
}
