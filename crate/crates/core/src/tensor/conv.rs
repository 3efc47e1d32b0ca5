use super::Scalar;

/// Stride and symmetric zero padding of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dParams {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding }
    }
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Self::new(1, 0)
    }
}

/// Geometry of a convolution from a `channels × h × w` image to an
/// `oh × ow` output grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Forward geometry, `None` if the kernel does not fit.
    pub fn forward(channels: usize, h: usize, w: usize, kh: usize, kw: usize, p: Conv2dParams) -> Option<Self> {
        if p.stride == 0 || h + 2 * p.padding < kh || w + 2 * p.padding < kw {
            return None;
        }
        Some(Self {
            channels,
            h,
            w,
            kh,
            kw,
            stride: p.stride,
            pad: p.padding,
            oh: (h + 2 * p.padding - kh) / p.stride + 1,
            ow: (w + 2 * p.padding - kw) / p.stride + 1,
        })
    }

    /// Geometry whose `oh × ow` grid is the transposed-convolution input and
    /// whose `h × w` image is its output.
    pub fn transposed(channels: usize, ih: usize, iw: usize, kh: usize, kw: usize, p: Conv2dParams) -> Option<Self> {
        let h = ((ih.checked_sub(1)?) * p.stride + kh).checked_sub(2 * p.padding)?;
        let w = ((iw.checked_sub(1)?) * p.stride + kw).checked_sub(2 * p.padding)?;
        if h == 0 || w == 0 || p.stride == 0 {
            return None;
        }
        Some(Self { channels, h, w, kh, kw, stride: p.stride, pad: p.padding, oh: ih, ow: iw })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    /// 1×1, stride 1, no padding: the column matrix is the image itself.
    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Input coordinate for output `o` at kernel offset `k`.
    #[inline]
    fn src(&self, o: usize, k: usize) -> isize {
        (o * self.stride + k) as isize - self.pad as isize
    }
}

/// Unfolds `img` (`channels × h × w`) into `cols` (`channels·kh·kw × oh·ow`).
pub(crate) fn im2col<T: Scalar>(img: &[T], g: &ConvGeom, cols: &mut [T]) {
    let ohw = g.col_cols();
    debug_assert_eq!(cols.len(), g.col_rows() * ohw);
    for c in 0..g.channels {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                for oy in 0..g.oh {
                    let iy = g.src(oy, ki);
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, out) in out_row.iter_mut().enumerate() {
                        let ix = g.src(ox, kj);
                        *out = if ix < 0 || ix >= g.w as isize { T::zero() } else { src_row[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `cols` back, adding into `img`.
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, img: &mut [T]) {
    let ohw = g.col_cols();
    for c in 0..g.channels {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ohw..(row + 1) * ohw];
                for oy in 0..g.oh {
                    let iy = g.src(oy, ki);
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in src[oy * g.ow..(oy + 1) * g.ow].iter().enumerate() {
                        let ix = g.src(ox, kj);
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] += *v;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_col2im_are_adjoint() {
        let g = ConvGeom::forward(2, 5, 6, 3, 3, Conv2dParams::new(2, 1)).unwrap();
        assert_eq!((g.oh, g.ow), (3, 3));
        let img: Vec<f64> = (0..60).map(|v| (v as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..g.col_rows() * g.col_cols()).map(|v| (v as f64 * 0.11).cos()).collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&img, &g, &mut cols);
        let mut back = vec![0.0; 60];
        col2im(&y, &g, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = img.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn transposed_geometry_inverts_forward_size() {
        let p = Conv2dParams::new(2, 1);
        let f = ConvGeom::forward(1, 8, 16, 4, 4, p).unwrap();
        let t = ConvGeom::transposed(1, f.oh, f.ow, 4, 4, p).unwrap();
        assert_eq!((t.h, t.w), (8, 16));
        assert!(ConvGeom::forward(1, 2, 2, 5, 5, Conv2dParams::default()).is_none());
    }
}
