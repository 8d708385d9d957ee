//! Token-wise Max similarity.
//!
//! For every target prompt token, take the best cosine against all source
//! tokens, then average over target tokens:
//!
//! ```text
//! sim(src, tgt) = 1/N_tgt * sum_j max_i cos(src_i, tgt_j)
//! ```
//!
//! The score is asymmetric. Two evaluation routes exist: a brute-force double
//! loop over [`cosine`](super::cosine), and the production path which
//! L2-normalizes rows once, computes the dense `tgt · srcᵀ` product with a
//! register-tiled kernel and reduces each target row by max.

use rayon::prelude::*;

use super::{cosine, norm, SimilarityError, SimilarityScore};
use crate::tensor_io::PromptMatrix;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MaxOptions {
    /// Average the two directions instead of max-over-source/mean-over-target.
    pub symmetrize: bool,
}

/// Source rows per packed panel.
const PANEL: usize = 8;

/// A prompt matrix with every row scaled to unit L2 norm.
///
/// Besides the row-major copy it keeps the rows packed in panels of
/// [`PANEL`] rows stored column by column (`panel[k * PANEL + c]`), zero
/// padded, which is the layout the kernels stream when this matrix is the
/// source side.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedRows {
    task_id: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    panels: Vec<f64>,
}

impl NormalizedRows {
    pub fn new(m: &PromptMatrix) -> Result<Self, SimilarityError> {
        let mut data = Vec::with_capacity(m.data().len());
        for (i, row) in m.iter_rows().enumerate() {
            let n = norm(row);
            if n == 0.0 {
                return Err(SimilarityError::ZeroRow {
                    task_id: m.task_id().to_string(),
                    row: i,
                });
            }
            data.extend(row.iter().map(|v| v / n));
        }
        let (rows, cols) = (m.rows(), m.cols());
        let mut panels = vec![0.0; rows.div_ceil(PANEL) * cols * PANEL];
        for i in 0..rows {
            let base = (i / PANEL) * cols * PANEL + i % PANEL;
            for (k, &v) in data[i * cols..(i + 1) * cols].iter().enumerate() {
                panels[base + k * PANEL] = v;
            }
        }
        Ok(Self {
            task_id: m.task_id().to_string(),
            rows,
            cols,
            data,
            panels,
        })
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

fn check_cols(src_id: &str, src: usize, tgt_id: &str, tgt: usize) -> Result<(), SimilarityError> {
    if src != tgt {
        return Err(SimilarityError::DimensionMismatch {
            what: format!("feature dim of {src_id} vs {tgt_id}"),
            left: src,
            right: tgt,
        });
    }
    Ok(())
}

/// Optimized Max similarity, max over source tokens and mean over target tokens.
pub fn max_similarity(
    src: &PromptMatrix,
    tgt: &PromptMatrix,
) -> Result<SimilarityScore, SimilarityError> {
    max_similarity_with(src, tgt, MaxOptions::default())
}

pub fn max_similarity_with(
    src: &PromptMatrix,
    tgt: &PromptMatrix,
    options: MaxOptions,
) -> Result<SimilarityScore, SimilarityError> {
    check_cols(src.task_id(), src.cols(), tgt.task_id(), tgt.cols())?;
    let value = max_similarity_normalized(&NormalizedRows::new(src)?, &NormalizedRows::new(tgt)?, options)?;
    Ok(SimilarityScore {
        source_id: src.task_id().to_string(),
        target_id: tgt.task_id().to_string(),
        method_id: "max".into(),
        value,
    })
}

/// Max similarity of matrices already passed through [`NormalizedRows`].
pub fn max_similarity_normalized(
    src: &NormalizedRows,
    tgt: &NormalizedRows,
    options: MaxOptions,
) -> Result<f64, SimilarityError> {
    check_cols(src.task_id(), src.cols(), tgt.task_id(), tgt.cols())?;
    Ok(if options.symmetrize {
        0.5 * (directed(src, tgt) + directed(tgt, src))
    } else {
        directed(src, tgt)
    })
}

/// Reference route: a plain double loop over [`cosine`]. Quadratic in tokens
/// and recomputes every norm; used to check the optimized path.
pub fn max_similarity_brute_force(
    src: &PromptMatrix,
    tgt: &PromptMatrix,
) -> Result<f64, SimilarityError> {
    check_cols(src.task_id(), src.cols(), tgt.task_id(), tgt.cols())?;
    for m in [src, tgt] {
        if let Some(row) = m.iter_rows().position(|r| norm(r) == 0.0) {
            return Err(SimilarityError::ZeroRow {
                task_id: m.task_id().to_string(),
                row,
            });
        }
    }
    let mut total = 0.0;
    for t in tgt.iter_rows() {
        let mut best = f64::NEG_INFINITY;
        for s in src.iter_rows() {
            best = best.max(cosine(s, t)?);
        }
        total += best;
    }
    Ok(total / tgt.rows() as f64)
}

/// All-pairs Max similarity over pre-normalized matrices, `result[t][s]`.
///
/// Pairs are evaluated in parallel on the current rayon pool; the output
/// order depends only on the input order.
pub fn max_similarity_matrix(
    sources: &[NormalizedRows],
    targets: &[NormalizedRows],
    options: MaxOptions,
) -> Result<Vec<Vec<f64>>, SimilarityError> {
    let ns = sources.len();
    let flat: Vec<f64> = (0..targets.len() * ns)
        .into_par_iter()
        .map(|idx| max_similarity_normalized(&sources[idx % ns], &targets[idx / ns], options))
        .collect::<Result<_, _>>()?;
    Ok(flat.chunks(ns.max(1)).map(<[f64]>::to_vec).collect())
}

/// Mean over target rows of the max dot product against source rows.
pub(crate) fn directed(src: &NormalizedRows, tgt: &NormalizedRows) -> f64 {
    let best = match select_kernel() {
        #[cfg(target_arch = "x86_64")]
        KernelKind::Avx512 => best_per_target::<x86::Avx512>(src, tgt),
        #[cfg(target_arch = "x86_64")]
        KernelKind::Avx2 => best_per_target::<x86::Avx2>(src, tgt),
        KernelKind::Portable => best_per_target::<Portable>(src, tgt),
    };
    reduce(&best)
}

fn reduce(best: &[f64]) -> f64 {
    let sum: f64 = best.iter().map(|v| v.clamp(-1.0, 1.0)).sum();
    (sum / best.len() as f64).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum KernelKind {
    #[cfg(target_arch = "x86_64")]
    Avx512,
    #[cfg(target_arch = "x86_64")]
    Avx2,
    Portable,
}

fn select_kernel() -> KernelKind {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx512f") {
            return KernelKind::Avx512;
        }
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            return KernelKind::Avx2;
        }
    }
    KernelKind::Portable
}

/// A register-tiled block of dot products: `ROWS` target rows against up to
/// `GROUP` consecutive source panels.
///
/// Every kernel accumulates each dot product as one fused multiply-add chain
/// in ascending column order, so all of them return bit-identical values.
trait Tiles {
    const ROWS: usize;
    const GROUP: usize;

    /// Writes `out[r * GROUP * PANEL + c]` for `r < ROWS`, `c < np * PANEL`.
    ///
    /// # Safety
    /// Each `t[r]` points to `d` readable values, `panels` to `np * d * PANEL`
    /// readable values, `1 <= np <= GROUP`, and the CPU supports the kernel.
    unsafe fn tile(t: &[*const f64], panels: *const f64, np: usize, d: usize, out: &mut [f64]);
}

fn best_per_target<K: Tiles>(src: &NormalizedRows, tgt: &NormalizedRows) -> Vec<f64> {
    let d = src.cols;
    assert_eq!(d, tgt.cols);
    let n_panels = src.rows.div_ceil(PANEL);
    assert_eq!(src.panels.len(), n_panels * d * PANEL);
    let stride = K::GROUP * PANEL;
    let mut out = vec![0.0; K::ROWS * stride];
    let mut best = vec![f64::NEG_INFINITY; tgt.rows];
    let mut t = vec![std::ptr::null(); K::ROWS];
    for j0 in (0..tgt.rows).step_by(K::ROWS) {
        // Rows past the end repeat the last one and are discarded.
        for (r, p) in t.iter_mut().enumerate() {
            *p = tgt.row((j0 + r).min(tgt.rows - 1)).as_ptr();
        }
        for q0 in (0..n_panels).step_by(K::GROUP) {
            let np = (n_panels - q0).min(K::GROUP);
            // SAFETY: rows have `d` values; panels q0..q0+np lie inside `src.panels`.
            unsafe { K::tile(&t, src.panels.as_ptr().add(q0 * d * PANEL), np, d, &mut out) };
            let valid = (src.rows - q0 * PANEL).min(np * PANEL);
            for r in 0..K::ROWS.min(tgt.rows - j0) {
                let b = &mut best[j0 + r];
                *b = out[r * stride..r * stride + valid].iter().fold(*b, |acc, &v| acc.max(v));
            }
        }
    }
    best
}

struct Portable;

impl Tiles for Portable {
    const ROWS: usize = 4;
    const GROUP: usize = 1;

    unsafe fn tile(t: &[*const f64], panels: *const f64, _np: usize, d: usize, out: &mut [f64]) {
        let rows: [&[f64]; 4] = std::array::from_fn(|r| std::slice::from_raw_parts(t[r], d));
        let panel = std::slice::from_raw_parts(panels, d * PANEL);
        let mut acc = [[0.0f64; PANEL]; 4];
        for k in 0..d {
            let s = &panel[k * PANEL..(k + 1) * PANEL];
            for r in 0..4 {
                let tv = rows[r][k];
                for c in 0..PANEL {
                    acc[r][c] = tv.mul_add(s[c], acc[r][c]);
                }
            }
        }
        for r in 0..4 {
            out[r * PANEL..(r + 1) * PANEL].copy_from_slice(&acc[r]);
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    use super::{Tiles, PANEL};
    use std::arch::x86_64::*;

    pub(super) struct Avx512;

    impl Tiles for Avx512 {
        const ROWS: usize = 8;
        const GROUP: usize = 3;

        unsafe fn tile(t: &[*const f64], panels: *const f64, np: usize, d: usize, out: &mut [f64]) {
            let t: &[*const f64; 8] = t.try_into().expect("8 target rows");
            match np {
                3 => tile512::<3>(t, panels, d, out),
                2 => tile512::<2>(t, panels, d, out),
                _ => tile512::<1>(t, panels, d, out),
            }
        }
    }

    #[target_feature(enable = "avx512f")]
    #[allow(clippy::needless_range_loop)]
    unsafe fn tile512<const P: usize>(t: &[*const f64; 8], panels: *const f64, d: usize, out: &mut [f64]) {
        let mut acc = [[_mm512_setzero_pd(); P]; 8];
        let mut s = [_mm512_setzero_pd(); P];
        for k in 0..d {
            for p in 0..P {
                s[p] = _mm512_loadu_pd(panels.add((p * d + k) * PANEL));
            }
            for r in 0..8 {
                let tv = _mm512_set1_pd(*t[r].add(k));
                for p in 0..P {
                    acc[r][p] = _mm512_fmadd_pd(tv, s[p], acc[r][p]);
                }
            }
        }
        let stride = Avx512::GROUP * PANEL;
        for r in 0..8 {
            for p in 0..P {
                _mm512_storeu_pd(out.as_mut_ptr().add(r * stride + p * PANEL), acc[r][p]);
            }
        }
    }

    pub(super) struct Avx2;

    impl Tiles for Avx2 {
        const ROWS: usize = 6;
        const GROUP: usize = 1;

        unsafe fn tile(t: &[*const f64], panels: *const f64, _np: usize, d: usize, out: &mut [f64]) {
            tile256(t.try_into().expect("6 target rows"), panels, d, out)
        }
    }

    #[target_feature(enable = "avx2,fma")]
    #[allow(clippy::needless_range_loop)]
    unsafe fn tile256(t: &[*const f64; 6], panels: *const f64, d: usize, out: &mut [f64]) {
        let mut acc = [[_mm256_setzero_pd(); 2]; 6];
        for k in 0..d {
            let lo = _mm256_loadu_pd(panels.add(k * PANEL));
            let hi = _mm256_loadu_pd(panels.add(k * PANEL + 4));
            for r in 0..6 {
                let tv = _mm256_set1_pd(*t[r].add(k));
                acc[r][0] = _mm256_fmadd_pd(tv, lo, acc[r][0]);
                acc[r][1] = _mm256_fmadd_pd(tv, hi, acc[r][1]);
            }
        }
        for r in 0..6 {
            _mm256_storeu_pd(out.as_mut_ptr().add(r * PANEL), acc[r][0]);
            _mm256_storeu_pd(out.as_mut_ptr().add(r * PANEL + 4), acc[r][1]);
        }
    }

    #[cfg(test)]
    pub(super) fn avx2_available() -> bool {
        std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma")
    }

    #[cfg(test)]
    pub(super) fn avx512_available() -> bool {
        std::is_x86_feature_detected!("avx512f")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn m(id: &str, rows: &[Vec<f64>]) -> PromptMatrix {
        PromptMatrix::from_rows(id, rows).unwrap()
    }

    fn both(src: &PromptMatrix, tgt: &PromptMatrix) -> (f64, f64) {
        (
            max_similarity(src, tgt).unwrap().value,
            max_similarity_brute_force(src, tgt).unwrap(),
        )
    }

    #[test]
    fn self_similarity_is_one() {
        let a = m("a", &[vec![0.3, -1.0, 2.0], vec![5.0, 0.1, 0.0], vec![-0.2, 0.4, 0.9]]);
        let (fast, slow) = both(&a, &a);
        assert!((fast - 1.0).abs() < 1e-12);
        assert!((slow - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_target_token() {
        let src = m("s", &[vec![1., 0.], vec![0., 1.]]);
        let tgt = m("t", &[vec![1., 1.]]);
        let (fast, slow) = both(&src, &tgt);
        assert!((fast - INV_SQRT2).abs() < 1e-12);
        assert!((slow - INV_SQRT2).abs() < 1e-12);
    }

    #[test]
    fn three_target_tokens() {
        let src = m("s", &[vec![1., 0.], vec![0., 1.]]);
        let tgt = m("t", &[vec![1., 0.], vec![0., 1.], vec![1., 1.]]);
        let expected = (2.0 + INV_SQRT2) / 3.0;
        let (fast, slow) = both(&src, &tgt);
        assert!((fast - expected).abs() < 1e-12);
        assert!((slow - 0.90236893).abs() < 1e-8);
    }

    #[test]
    fn asymmetric_orientation() {
        // Reversing roles: each of the two source tokens finds its match
        // among three, so the reverse score is 1.
        let a = m("a", &[vec![1., 0.], vec![0., 1.]]);
        let b = m("b", &[vec![1., 0.], vec![0., 1.], vec![1., 1.]]);
        assert!((max_similarity(&b, &a).unwrap().value - 1.0).abs() < 1e-12);
        assert!(max_similarity(&a, &b).unwrap().value < 0.95);
        let sym = max_similarity_with(&a, &b, MaxOptions { symmetrize: true }).unwrap().value;
        assert!((sym - 0.5 * (1.0 + (2.0 + INV_SQRT2) / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_row_is_named() {
        let src = m("s", &[vec![1., 0.], vec![0., 0.]]);
        let tgt = m("t", &[vec![1., 1.]]);
        let expected = SimilarityError::ZeroRow {
            task_id: "s".into(),
            row: 1,
        };
        assert_eq!(max_similarity(&src, &tgt).unwrap_err(), expected);
        assert_eq!(max_similarity_brute_force(&src, &tgt).unwrap_err(), expected);
    }

    #[test]
    fn dimension_mismatch() {
        let src = m("s", &[vec![1., 0.]]);
        let tgt = m("t", &[vec![1., 1., 1.]]);
        assert!(matches!(
            max_similarity(&src, &tgt),
            Err(SimilarityError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn kernels_are_bit_identical() {
        // Shapes off the tile and panel sizes exercise padding.
        let rows = |n: usize, d: usize, k: f64| -> Vec<Vec<f64>> {
            (0..n)
                .map(|i| (0..d).map(|j| ((i * 31 + j * 7) as f64 * k).sin() + 0.01).collect())
                .collect()
        };
        for (ns, nt, d) in [(7, 5, 11), (1, 1, 1), (9, 17, 3), (25, 13, 40), (100, 100, 64)] {
            let s = NormalizedRows::new(&m("s", &rows(ns, d, 0.37))).unwrap();
            let t = NormalizedRows::new(&m("t", &rows(nt, d, 0.91))).unwrap();
            let portable = best_per_target::<Portable>(&s, &t);
            let naive: Vec<f64> = (0..nt)
                .map(|j| {
                    (0..ns)
                        .map(|i| s.row(i).iter().zip(t.row(j)).fold(0.0, |acc: f64, (a, b)| a.mul_add(*b, acc)))
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            assert_eq!(portable, naive);
            #[cfg(target_arch = "x86_64")]
            {
                if x86::avx2_available() {
                    assert_eq!(best_per_target::<x86::Avx2>(&s, &t), portable);
                }
                if x86::avx512_available() {
                    assert_eq!(best_per_target::<x86::Avx512>(&s, &t), portable);
                }
            }
            assert_eq!(directed(&s, &t), reduce(&portable));
        }
    }

    #[test]
    fn matrix_layout_is_target_major() {
        let a = m("a", &[vec![1., 0.]]);
        let b = m("b", &[vec![0., 1.]]);
        let c = m("c", &[vec![1., 1.]]);
        let norm = |x: &PromptMatrix| NormalizedRows::new(x).unwrap();
        let grid = max_similarity_matrix(&[norm(&a), norm(&b)], &[norm(&c), norm(&a)], MaxOptions::default()).unwrap();
        assert_eq!(grid.len(), 2);
        assert!((grid[0][0] - INV_SQRT2).abs() < 1e-12);
        assert!((grid[1][0] - 1.0).abs() < 1e-12);
        assert!(grid[1][1].abs() < 1e-12);
    }
}
