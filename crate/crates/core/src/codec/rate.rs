//! Rate control: Lagrangian pruning against a symbol-cost model, and λ
//! search for a target compression ratio.

use super::quant::{quantize_fit, quantize_leaf, CoeffQuantizer, QuantizedCoeffs};
use super::{CoefficientTables, HuffmanModel, HEADER_LEN};
use crate::error::{Error, Result};
use crate::tree::{index_bits, prune_tree, structure_bits, BspTree, NodeId, NodeKind, RateModel};

/// Relative size tolerance when targeting a ratio.
pub const RATIO_TOLERANCE: f64 = 0.02;
/// Bisection steps after the bracket is found.
pub const MAX_BISECTION_STEPS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RateControl {
    /// Prune with a fixed Lagrange multiplier.
    Lambda(f64),
    /// Search λ so that `raw bytes / coded bytes` lands within
    /// [`RATIO_TOLERANCE`] of the target.
    TargetRatio(f64),
}

impl RateControl {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Lambda(l) if l >= 0.0 => Ok(()),
            Self::TargetRatio(r) if r > 0.0 && r.is_finite() => Ok(()),
            other => Err(Error::InvalidParam(format!("{other:?}"))),
        }
    }
}

/// Bit cost per quantized symbol, one table per coefficient class.
#[derive(Clone, Debug)]
struct SymbolCosts {
    lo: [i32; 3],
    bits: [Vec<f64>; 3],
}

impl SymbolCosts {
    fn cost(&self, coeffs: &QuantizedCoeffs) -> f64 {
        (0..3)
            .map(|i| {
                usize::try_from(coeffs[i] - self.lo[i])
                    .ok()
                    .and_then(|k| self.bits[i].get(k))
                    .copied()
                    .unwrap_or(f64::INFINITY)
            })
            .sum()
    }
}

#[derive(Clone, Debug)]
struct Histogram {
    lo: [i32; 3],
    counts: [Vec<u64>; 3],
}

impl Histogram {
    fn over<'a>(coeffs: impl Iterator<Item = &'a QuantizedCoeffs> + Clone) -> Self {
        let mut lo = [0; 3];
        let mut counts: [Vec<u64>; 3] = Default::default();
        for i in 0..3 {
            let min = coeffs.clone().map(|c| c[i]).min().unwrap_or(0);
            let max = coeffs.clone().map(|c| c[i]).max().unwrap_or(0);
            lo[i] = min;
            counts[i] = vec![0; (max - min + 1) as usize];
            for c in coeffs.clone() {
                counts[i][(c[i] - min) as usize] += 1;
            }
        }
        Self { lo, counts }
    }

    /// Ideal code lengths `-log2 p`.
    fn entropy_costs(&self) -> SymbolCosts {
        let bits = self.counts.clone().map(|counts| {
            let total: u64 = counts.iter().sum();
            counts
                .iter()
                .map(|&c| {
                    if c == 0 {
                        f64::INFINITY
                    } else {
                        (total as f64 / c as f64).log2()
                    }
                })
                .collect()
        });
        SymbolCosts { lo: self.lo, bits }
    }

    /// Huffman lengths for `weights`, a histogram over a subset of this
    /// histogram's support. Every symbol in the support keeps a code.
    fn huffman_costs(&self, weights: &Histogram) -> SymbolCosts {
        let bits = std::array::from_fn(|i| {
            let freqs: Vec<u64> = self.counts[i]
                .iter()
                .enumerate()
                .map(|(k, &c)| {
                    let s = self.lo[i] + k as i32;
                    let w = usize::try_from(s - weights.lo[i])
                        .ok()
                        .and_then(|j| weights.counts[i].get(j))
                        .copied()
                        .unwrap_or(0);
                    if c == 0 {
                        0
                    } else {
                        2 * w + 1
                    }
                })
                .collect();
            let model = HuffmanModel::from_frequencies(self.lo[i], &freqs);
            model.lengths().iter().map(|&l| f64::from(l)).collect()
        });
        SymbolCosts { lo: self.lo, bits }
    }
}

struct SymbolRate<'a> {
    costs: &'a SymbolCosts,
    q: &'a CoeffQuantizer,
}

impl RateModel for SymbolRate<'_> {
    fn leaf_bits(&self, tree: &BspTree, node: NodeId) -> f64 {
        let n = &tree.nodes[node];
        let payload = n
            .fit
            .and_then(|f| quantize_fit(&f, self.q).ok())
            .map_or(f64::INFINITY, |c| self.costs.cost(&c));
        structure_bits(n) + payload
    }

    fn split_bits(&self, tree: &BspTree, node: NodeId) -> f64 {
        let n = &tree.nodes[node];
        structure_bits(n) + f64::from(index_bits(n.split_options))
    }
}

pub(crate) struct Plan {
    pub lambda: f64,
    pub forest: Vec<BspTree>,
    pub bytes: u64,
    pub target_met: bool,
}

/// Holds the unpruned forest with every node's fit replaced by its
/// quantized plane, so pruning and sizing see exactly what is coded.
pub(crate) struct Planner {
    forest: Vec<BspTree>,
    q: CoeffQuantizer,
    support: Histogram,
    prior: SymbolCosts,
}

impl Planner {
    pub fn new(trees: &[BspTree], q: &CoeffQuantizer) -> Result<Self> {
        let mut forest = trees.to_vec();
        let mut all = Vec::new();
        for tree in &mut forest {
            for node in &mut tree.nodes {
                let (Some(fit), Some(moments)) = (node.fit, node.moments) else {
                    return Err(Error::Sync("node without fit or moments".into()));
                };
                let (coeffs, sse) = quantize_leaf(&fit, &moments, q)?;
                node.fit = Some(crate::fitting::PlaneFit {
                    sse,
                    ..q.dequantize(coeffs)
                });
                all.push(coeffs);
            }
        }
        let support = Histogram::over(all.iter());
        let prior = support.entropy_costs();
        Ok(Self {
            forest,
            q: *q,
            support,
            prior,
        })
    }

    fn prune(&self, lambda: f64, costs: &SymbolCosts) -> Vec<BspTree> {
        let model = SymbolRate { costs, q: &self.q };
        self.forest
            .iter()
            .map(|t| prune_tree(t, lambda, &model))
            .collect()
    }

    fn leaf_coeffs(&self, forest: &[BspTree]) -> Result<Vec<QuantizedCoeffs>> {
        forest
            .iter()
            .flat_map(|t| t.nodes.iter())
            .filter(|n| n.is_leaf())
            .map(|n| {
                quantize_fit(
                    &n.fit
                        .ok_or_else(|| Error::Sync("leaf without fit".into()))?,
                    &self.q,
                )
            })
            .collect()
    }

    /// Prunes with the prior costs, refits the costs to the surviving
    /// leaves' Huffman code, prunes again and measures the exact size.
    fn evaluate(&self, lambda: f64) -> Result<(Vec<BspTree>, u64)> {
        let first = self.prune(lambda, &self.prior);
        let leaves = self.leaf_coeffs(&first)?;
        let costs = self.support.huffman_costs(&Histogram::over(leaves.iter()));
        let forest = self.prune(lambda, &costs);
        let bytes = coded_bytes(&forest, &self.q)?;
        Ok((forest, bytes))
    }

    pub fn plan(&self, rate: RateControl, raw_bytes: f64) -> Result<Plan> {
        rate.validate()?;
        match rate {
            RateControl::Lambda(l) => {
                let lambda = super::stream::snap_lambda(l);
                let (forest, bytes) = self.evaluate(lambda)?;
                Ok(Plan {
                    lambda,
                    forest,
                    bytes,
                    target_met: true,
                })
            }
            RateControl::TargetRatio(ratio) => self.search(raw_bytes / ratio),
        }
    }

    fn search(&self, target: f64) -> Result<Plan> {
        let within = |bytes: u64| ((bytes as f64 - target) / target).abs() <= RATIO_TOLERANCE;
        let mut best: Option<(f64, Vec<BspTree>, u64)> = None;
        let mut consider = |lambda: f64, forest: Vec<BspTree>, bytes: u64| {
            let err = |b: u64| (b as f64 - target).abs();
            if best.as_ref().map_or(true, |(_, _, b)| err(bytes) < err(*b)) {
                best = Some((lambda, forest, bytes));
            }
        };
        let done = |lambda: f64, forest: Vec<BspTree>, bytes: u64| Plan {
            lambda,
            forest,
            bytes,
            target_met: true,
        };

        // The largest size is at λ = 0, the smallest at λ = ∞.
        let (forest, bytes) = self.evaluate(0.0)?;
        if within(bytes) || (bytes as f64) < target {
            let met = within(bytes);
            return Ok(Plan {
                target_met: met,
                ..done(0.0, forest, bytes)
            });
        }
        consider(0.0, forest, bytes);
        let (forest, bytes) = self.evaluate(f64::INFINITY)?;
        if !within(bytes) && (bytes as f64) > target {
            return Ok(Plan {
                target_met: false,
                ..done(f64::INFINITY, forest, bytes)
            });
        }
        consider(f64::INFINITY, forest, bytes);

        // Bracket in powers of two, then bisect in log space.
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut lambda = 1.0f64;
        for _ in 0..64 {
            let (forest, bytes) = self.evaluate(lambda)?;
            if within(bytes) {
                return Ok(done(lambda, forest, bytes));
            }
            let too_big = bytes as f64 > target;
            consider(lambda, forest, bytes);
            if too_big {
                lo = lambda;
                if hi.is_finite() {
                    break;
                }
                lambda *= 2.0;
            } else {
                hi = lambda;
                if lo > 0.0 {
                    break;
                }
                lambda /= 2.0;
            }
        }
        if lo > 0.0 && hi.is_finite() {
            for _ in 0..MAX_BISECTION_STEPS {
                let mid = (lo * hi).sqrt();
                let (forest, bytes) = self.evaluate(mid)?;
                if within(bytes) {
                    return Ok(done(mid, forest, bytes));
                }
                if bytes as f64 > target {
                    lo = mid;
                } else {
                    hi = mid;
                }
                consider(mid, forest, bytes);
            }
        }
        let (lambda, forest, bytes) = best.expect("at least one evaluation");
        Ok(Plan {
            target_met: within(bytes),
            ..done(lambda, forest, bytes)
        })
    }
}

/// Exact stream size of `forest` with tables fitted to its leaves.
fn coded_bytes(forest: &[BspTree], q: &CoeffQuantizer) -> Result<u64> {
    let tables = CoefficientTables::for_forest(forest, q)?;
    let mut bits = HEADER_LEN as u64 * 8 + tables.table_bits();
    for tree in forest {
        for node in &tree.nodes {
            bits += structure_bits(node) as u64;
            bits += match node.kind {
                NodeKind::Internal { .. } => u64::from(index_bits(node.split_options)),
                NodeKind::Leaf => {
                    let fit = node
                        .fit
                        .ok_or_else(|| Error::Sync("leaf without fit".into()))?;
                    tables
                        .leaf_bits(&quantize_fit(&fit, q)?)
                        .ok_or_else(|| Error::Sync("leaf symbol without a code".into()))?
                }
            };
        }
    }
    Ok(bits.div_ceil(8))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_control_validation() {
        assert!(RateControl::Lambda(0.0).validate().is_ok());
        assert!(RateControl::Lambda(f64::INFINITY).validate().is_ok());
        assert!(RateControl::Lambda(-1.0).validate().is_err());
        assert!(RateControl::Lambda(f64::NAN).validate().is_err());
        assert!(RateControl::TargetRatio(0.0).validate().is_err());
        assert!(RateControl::TargetRatio(8.0).validate().is_ok());
    }

    #[test]
    fn entropy_costs_match_probabilities() {
        let coeffs = [[0, 0, 1], [0, 0, 1], [0, 0, 2], [0, 0, 3]];
        let h = Histogram::over(coeffs.iter());
        let costs = h.entropy_costs();
        assert_eq!(costs.bits[0], vec![0.0]);
        assert_eq!(costs.bits[2], vec![1.0, 2.0, 2.0]);
        assert_eq!(costs.cost(&[0, 0, 1]), 1.0);
        assert_eq!(costs.cost(&[0, 0, 9]), f64::INFINITY);
    }

    #[test]
    fn huffman_costs_keep_the_whole_support() {
        let all = [[0, 0, 1], [0, 0, 2], [0, 0, 3], [0, 0, 4]];
        let support = Histogram::over(all.iter());
        let kept = [[0, 0, 1], [0, 0, 1], [0, 0, 1]];
        let costs = support.huffman_costs(&Histogram::over(kept.iter()));
        assert!(costs.bits[2].iter().all(|b| b.is_finite() && *b >= 1.0));
        assert_eq!(costs.bits[2][0], 1.0);
    }
}
