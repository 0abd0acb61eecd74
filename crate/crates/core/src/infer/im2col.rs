//! Convolution as matrix multiplication.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Convolution over a `cin x h x w` input with `cout` filters of
/// `cin x kh x kw`, zero padding `pad` on every side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> Result<(usize, usize)> {
        let (hp, wp) = (self.h + 2 * self.pad, self.w + 2 * self.pad);
        if self.cin == 0 || self.cout == 0 || self.stride == 0 || self.kh == 0 || self.kw == 0 || self.kh > hp || self.kw > wp {
            return Err(Error::dim(format!(
                "conv {}x{} stride {} pad {} on {}x{}x{}",
                self.kh, self.kw, self.stride, self.pad, self.cin, self.h, self.w
            )));
        }
        Ok(((hp - self.kh) / self.stride + 1, (wp - self.kw) / self.stride + 1))
    }

    /// Columns of the patch matrix.
    pub fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn n_in(&self) -> usize {
        self.cin * self.h * self.w
    }

    pub fn n_weights(&self) -> usize {
        self.cout * self.k()
    }
}

/// Patch matrix of one input: `rows x cols` with `rows = oh * ow` output
/// positions and `cols = cin * kh * kw`; `index[r * cols + j]` is the input
/// element feeding it, or `None` for padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Im2Col {
    pub oh: usize,
    pub ow: usize,
    pub rows: usize,
    pub cols: usize,
    pub index: Vec<Option<usize>>,
}

pub fn im2col(g: &ConvGeom) -> Result<Im2Col> {
    let (oh, ow) = g.out_hw()?;
    let cols = g.k();
    let mut index = Vec::with_capacity(oh * ow * cols);
    for oy in 0..oh {
        for ox in 0..ow {
            for ci in 0..g.cin {
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        let inside = iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w;
                        index.push(inside.then(|| (ci * g.h + iy as usize) * g.w + ix as usize));
                    }
                }
            }
        }
    }
    Ok(Im2Col { oh, ow, rows: oh * ow, cols, index })
}

/// Index map turning `(cout, k)` filters into the `k x cout` right operand.
pub fn filter_transpose(g: &ConvGeom) -> Vec<usize> {
    let k = g.k();
    (0..k).flat_map(|j| (0..g.cout).map(move |o| o * k + j)).collect()
}

/// Index map from the `(oh * ow) x cout` product to `cout x oh x ow` order.
pub fn output_to_chw(rows: usize, cout: usize) -> Vec<usize> {
    (0..cout).flat_map(|o| (0..rows).map(move |r| r * cout + o)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::{matmul, Ring};
    use proptest::prelude::*;

    const R: Ring = Ring::DEFAULT;

    /// Nested-loop convolution in the ring.
    fn direct(g: &ConvGeom, x: &[u64], wt: &[u64]) -> Vec<u64> {
        let (oh, ow) = g.out_hw().unwrap();
        let mut y = alloc::vec![0u64; g.cout * oh * ow];
        for o in 0..g.cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0u64;
                    for ci in 0..g.cin {
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy as usize >= g.h || ix as usize >= g.w {
                                    continue;
                                }
                                let xv = x[(ci * g.h + iy as usize) * g.w + ix as usize];
                                let wv = wt[((o * g.cin + ci) * g.kh + ky) * g.kw + kx];
                                acc = R.add(acc, R.mul(xv, wv));
                            }
                        }
                    }
                    y[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        y
    }

    fn via_matmul(g: &ConvGeom, x: &[u64], wt: &[u64]) -> Vec<u64> {
        let m = im2col(g).unwrap();
        let p: Vec<u64> = m.index.iter().map(|i| i.map_or(0, |i| x[i])).collect();
        let wtt: Vec<u64> = filter_transpose(g).iter().map(|&i| wt[i]).collect();
        let prod = matmul(R, &p, &wtt, m.rows, m.cols, g.cout);
        output_to_chw(m.rows, g.cout).iter().map(|&i| prod[i]).collect()
    }

    #[test]
    fn pointwise_conv_is_identity_map() {
        let g = ConvGeom { cin: 3, cout: 2, kh: 1, kw: 1, stride: 1, pad: 0, h: 4, w: 4 };
        let m = im2col(&g).unwrap();
        assert_eq!((m.rows, m.cols), (16, 3));
        for r in 0..16 {
            for c in 0..3 {
                assert_eq!(m.index[r * 3 + c], Some(c * 16 + r));
            }
        }
    }

    #[test]
    fn three_by_three_geometry() {
        let g = ConvGeom { cin: 2, cout: 1, kh: 3, kw: 3, stride: 1, pad: 0, h: 5, w: 5 };
        let m = im2col(&g).unwrap();
        assert_eq!((m.oh, m.ow, m.cols), (3, 3, 18));
    }

    #[test]
    fn bad_geometry() {
        let g = ConvGeom { cin: 1, cout: 1, kh: 6, kw: 3, stride: 1, pad: 0, h: 5, w: 5 };
        assert!(im2col(&g).is_err());
    }

    proptest! {
        #[test]
        fn matches_direct_convolution(
            cin in 1usize..4, cout in 1usize..4, k in 1usize..4, stride in 1usize..3,
            pad in 0usize..2, h in 3usize..8, w in 3usize..8, seed in any::<u64>(),
        ) {
            let g = ConvGeom { cin, cout, kh: k, kw: k, stride, pad, h, w };
            prop_assume!(g.out_hw().is_ok());
            let mut s = seed;
            let mut next = move || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); R.reduce(s >> 17) };
            let x: Vec<u64> = (0..g.n_in()).map(|_| next()).collect();
            let wt: Vec<u64> = (0..g.n_weights()).map(|_| next()).collect();
            prop_assert_eq!(via_matmul(&g, &x, &wt), direct(&g, &x, &wt));
        }
    }
}
