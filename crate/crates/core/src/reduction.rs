//! Chunked tree reduction of long 3-vector sums.
//!
//! Mode sums over 10^5..10^7 spectral terms dominate the simulation cost.
//! Terms are partitioned into power-of-two chunks, each chunk is reduced by
//! pairwise halving (8 steps for the default chunk of 256), and the chunk
//! results are combined in a fixed ascending order with compensated
//! accumulation. The combine order never depends on how many workers ran the
//! chunks, so results are bit-reproducible for any worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::vec3::Vec3;

/// Interior precision of the per-chunk tree reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    /// f64 everywhere; the cross-chunk combine is compensated. Science mode.
    #[default]
    Extended,
    /// f32 chunk interiors, f64 combine. Emulates a single-precision device
    /// summing chunks with a double-precision host combine.
    Working,
}

/// Shape of the chunked reduction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReductionPlan {
    /// Terms per chunk; must be a power of two.
    pub chunk_size: usize,
    /// Interior precision of the chunk trees.
    pub precision: Precision,
    /// Degree of chunk-level parallelism; 1 runs serially. The result is
    /// identical for every value.
    pub worker_count: usize,
}

impl Default for ReductionPlan {
    fn default() -> Self {
        Self { chunk_size: 256, precision: Precision::Extended, worker_count: 1 }
    }
}

impl ReductionPlan {
    pub fn new(chunk_size: usize) -> Self {
        Self { chunk_size, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ReductionError> {
        if self.chunk_size == 0 || !self.chunk_size.is_power_of_two() {
            return Err(ReductionError::BadChunkSize(self.chunk_size));
        }
        Ok(())
    }

    /// Tree depth per chunk: `log2(chunk_size)`.
    pub fn tree_depth(&self) -> u32 {
        self.chunk_size.trailing_zeros()
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReductionError {
    #[error("chunk size {0} is not a power of two")]
    BadChunkSize(usize),
    #[error("empty term sequence")]
    Empty,
}

/// Reduce one chunk by pairwise halving. Short chunks behave as if padded
/// with zeros to the full chunk size.
fn tree_reduce_f64(buf: &mut [Vec3]) -> Vec3 {
    let mut len = buf.len().next_power_of_two();
    // Virtual zero padding: indices beyond buf.len() contribute nothing.
    while len > 1 {
        let half = len / 2;
        for i in 0..half {
            let hi = i + half;
            if hi < buf.len() {
                let v = buf[hi];
                buf[i] += v;
            }
        }
        len = half;
    }
    buf[0]
}

fn tree_reduce_f32(chunk: &[Vec3]) -> Vec3 {
    let mut buf: Vec<[f32; 3]> =
        chunk.iter().map(|v| [v.x as f32, v.y as f32, v.z as f32]).collect();
    let mut len = buf.len().next_power_of_two();
    while len > 1 {
        let half = len / 2;
        for i in 0..half {
            let hi = i + half;
            if hi < buf.len() {
                let v = buf[hi];
                buf[i][0] += v[0];
                buf[i][1] += v[1];
                buf[i][2] += v[2];
            }
        }
        len = half;
    }
    Vec3::new(buf[0][0] as f64, buf[0][1] as f64, buf[0][2] as f64)
}

fn reduce_chunk(chunk: &[Vec3], precision: Precision) -> Vec3 {
    match precision {
        Precision::Extended => {
            let mut buf = chunk.to_vec();
            tree_reduce_f64(&mut buf)
        }
        Precision::Working => tree_reduce_f32(chunk),
    }
}

/// Compensated (Kahan) accumulator for the cross-chunk combine.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: Vec3,
    carry: Vec3,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, v: Vec3) {
        let y = v - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> Vec3 {
        self.sum
    }
}

/// Serial compensated sum; the extended-precision reference path.
pub fn compensated_serial_sum(terms: &[Vec3]) -> Vec3 {
    let mut acc = CompensatedSum::default();
    for &t in terms {
        acc.add(t);
    }
    acc.value()
}

/// Chunked tree reduction of a term sequence.
///
/// Chunk results are combined in ascending chunk order regardless of
/// `plan.worker_count`, so the output is deterministic for a fixed input
/// ordering.
pub fn chunked_sum(terms: &[Vec3], plan: &ReductionPlan) -> Result<Vec3, ReductionError> {
    plan.validate()?;
    if terms.is_empty() {
        return Err(ReductionError::Empty);
    }
    let partials: Vec<Vec3> = if plan.worker_count > 1 {
        terms.par_chunks(plan.chunk_size).map(|c| reduce_chunk(c, plan.precision)).collect()
    } else {
        terms.chunks(plan.chunk_size).map(|c| reduce_chunk(c, plan.precision)).collect()
    };
    let mut acc = CompensatedSum::default();
    for p in partials {
        acc.add(p);
    }
    Ok(acc.value())
}

/// Streaming variant: chunks are produced on the fly by `fill`, which writes
/// `chunk_size` (or fewer, for the tail) terms for chunk `index` and returns
/// the number written. Reduction structure and combine order are identical
/// to [`chunked_sum`], without materializing the full term sequence.
pub fn chunked_sum_with(
    n_terms: usize,
    plan: &ReductionPlan,
    mut fill: impl FnMut(usize, &mut [Vec3]) -> usize,
) -> Result<Vec3, ReductionError> {
    plan.validate()?;
    if n_terms == 0 {
        return Err(ReductionError::Empty);
    }
    let n_chunks = n_terms.div_ceil(plan.chunk_size);
    let mut buf = vec![Vec3::default(); plan.chunk_size];
    let mut acc = CompensatedSum::default();
    for index in 0..n_chunks {
        let expect = (n_terms - index * plan.chunk_size).min(plan.chunk_size);
        let written = fill(index, &mut buf[..expect]);
        debug_assert_eq!(written, expect);
        let partial = match plan.precision {
            Precision::Extended => tree_reduce_f64(&mut buf[..expect]),
            Precision::Working => tree_reduce_f32(&buf[..expect]),
        };
        acc.add(partial);
    }
    Ok(acc.value())
}

/// Result of comparing the working-precision chunked sum against the
/// extended-precision serial reference on the same terms.
#[derive(Debug, Clone, Copy)]
pub struct PrecisionAudit {
    /// Working-precision (f32-interior) chunked result.
    pub working_sum: Vec3,
    /// Extended-precision serial reference.
    pub extended_sum: Vec3,
    /// Euclidean norm of the discrepancy.
    pub discrepancy: f64,
    /// Discrepancy divided by `reference_amplitude`.
    pub ratio_to_reference: f64,
}

/// Audit the mixed-precision error of a term sequence.
///
/// `reference_amplitude` is the scale to compare against; in spectral use it
/// is the integrated amplitude of the lowest retained harmonic.
pub fn precision_audit(
    terms: &[Vec3],
    plan: &ReductionPlan,
    reference_amplitude: f64,
) -> Result<PrecisionAudit, ReductionError> {
    let working_plan = ReductionPlan { precision: Precision::Working, ..*plan };
    let working_sum = chunked_sum(terms, &working_plan)?;
    let extended_sum = compensated_serial_sum(terms);
    let discrepancy = (working_sum - extended_sum).norm();
    let ratio = if reference_amplitude > 0.0 { discrepancy / reference_amplitude } else { f64::NAN };
    Ok(PrecisionAudit { working_sum, extended_sum, discrepancy, ratio_to_reference: ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_terms(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect()
    }

    #[test]
    fn exact_integer_chunk() {
        let terms = vec![Vec3::new(1.0, 0.0, 0.0); 256];
        let sum = chunked_sum(&terms, &ReductionPlan::default()).unwrap();
        assert_eq!(sum, Vec3::new(256.0, 0.0, 0.0));
    }

    #[test]
    fn rejects_empty_and_bad_chunk() {
        assert_eq!(chunked_sum(&[], &ReductionPlan::default()), Err(ReductionError::Empty));
        let plan = ReductionPlan::new(100);
        assert_eq!(
            chunked_sum(&[Vec3::default()], &plan),
            Err(ReductionError::BadChunkSize(100))
        );
    }

    #[test]
    fn tree_depth_matches_chunk_size() {
        assert_eq!(ReductionPlan::new(256).tree_depth(), 8);
        assert_eq!(ReductionPlan::new(512).tree_depth(), 9);
    }

    #[test]
    fn partial_chunk_equals_zero_padded() {
        let terms = random_terms(1000, 7);
        let mut padded = terms.clone();
        padded.resize(1024, Vec3::default());
        let plan = ReductionPlan::default();
        let a = chunked_sum(&terms, &plan).unwrap();
        let b = chunked_sum(&padded, &plan).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn matches_serial_reference_on_large_input() {
        let terms = random_terms(1_000_000, 11);
        let reference = compensated_serial_sum(&terms);
        let sum = chunked_sum(&terms, &ReductionPlan::default()).unwrap();
        let rel = (sum - reference).norm() / reference.norm().max(1e-300);
        assert!(rel < 1e-10, "relative deviation {rel}");
    }

    #[test]
    fn worker_count_does_not_change_bits() {
        let terms = random_terms(100_000, 3);
        let base = chunked_sum(&terms, &ReductionPlan::default()).unwrap();
        for workers in [2, 4, 16] {
            let plan = ReductionPlan { worker_count: workers, ..ReductionPlan::default() };
            let sum = chunked_sum(&terms, &plan).unwrap();
            assert_eq!(sum, base, "worker_count={workers}");
        }
    }

    #[test]
    fn streaming_matches_slice_path() {
        let terms = random_terms(10_000, 5);
        let plan = ReductionPlan::default();
        let slice_sum = chunked_sum(&terms, &plan).unwrap();
        let stream_sum = chunked_sum_with(terms.len(), &plan, |index, buf| {
            let start = index * plan.chunk_size;
            let n = buf.len();
            buf.copy_from_slice(&terms[start..start + n]);
            n
        })
        .unwrap();
        assert_eq!(slice_sum, stream_sum);
    }

    #[test]
    fn audit_zero_terms_zero_discrepancy() {
        let terms = vec![Vec3::default(); 512];
        let audit = precision_audit(&terms, &ReductionPlan::default(), 1.0).unwrap();
        assert_eq!(audit.discrepancy, 0.0);
    }

    #[test]
    fn audit_detects_cancellation() {
        // Alternating +/-(1e8 + tiny) summing to 1: the tiny parts vanish in
        // f32, where eps(1e8) is about 8.
        let mut terms = Vec::new();
        let n_pairs = 2048;
        for _ in 0..n_pairs {
            terms.push(Vec3::new(1e8 + 1.0 / n_pairs as f64, 0.0, 0.0));
            terms.push(Vec3::new(-1e8, 0.0, 0.0));
        }
        let audit = precision_audit(&terms, &ReductionPlan::default(), 1.0).unwrap();
        assert_relative_eq!(audit.extended_sum.x, 1.0, max_relative = 1e-9);
        assert!(
            audit.discrepancy / audit.extended_sum.norm() > 1e-10,
            "expected visible mixed-precision error, got {:?}",
            audit
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn chunk_size_independence(seed in 0u64..50, log_size in 7usize..10) {
            let terms = random_terms(3000, seed);
            let reference = compensated_serial_sum(&terms);
            let plan = ReductionPlan::new(1 << log_size);
            let sum = chunked_sum(&terms, &plan).unwrap();
            let rel = (sum - reference).norm() / reference.norm().max(1e-30);
            prop_assert!(rel < 1e-10);
        }
    }
}
