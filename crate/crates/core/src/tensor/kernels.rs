//! Raw row-major kernels shared by the tape ops.

/// `c[n×m] += a[n×k] · b[k×m]`
pub fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let row = &mut c[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (cv, bv) in row.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[n×k] += a[n×m] · b[k×m]ᵀ`
pub fn matmul_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], n: usize, m: usize, k: usize) {
    for i in 0..n {
        let arow = &a[i * m..(i + 1) * m];
        for p in 0..k {
            let brow = &b[p * m..(p + 1) * m];
            let dot: f64 = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            c[i * k + p] += dot;
        }
    }
}

/// `c[k×m] += a[n×k]ᵀ · b[n×m]`
pub fn matmul_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * m..(p + 1) * m];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    fn cin_per_group(&self) -> usize {
        self.c_in / self.groups
    }

    fn cout_per_group(&self) -> usize {
        self.c_out / self.groups
    }

    /// Output columns `ox` whose input column `ox*stride + kx - padding` is in range.
    fn ox_range(&self, kx: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let p = self.padding as isize;
        let kx = kx as isize;
        let w = self.w as isize;
        // ox*s + kx - p >= 0  and  <= w - 1
        let lo = ((p - kx) + s - 1).div_euclid(s).max(0);
        let hi = ((w - 1 + p - kx).div_euclid(s) + 1).min(self.w_out as isize);
        if hi <= lo {
            (0, 0)
        } else {
            (lo as usize, hi as usize)
        }
    }

    fn iy(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }
}

pub fn conv2d_forward(g: &ConvGeom, x: &[f64], wt: &[f64], bias: Option<&[f64]>, out: &mut [f64]) {
    let cin_g = g.cin_per_group();
    let cout_g = g.cout_per_group();
    let plane_out = g.h_out * g.w_out;
    for co in 0..g.c_out {
        let grp = co / cout_g;
        let oplane = &mut out[co * plane_out..(co + 1) * plane_out];
        if let Some(b) = bias {
            oplane.iter_mut().for_each(|v| *v = b[co]);
        }
        for cl in 0..cin_g {
            let ci = grp * cin_g + cl;
            let iplane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wv = wt[((co * cin_g + cl) * g.kh + ky) * g.kw + kx];
                    let (lo, hi) = g.ox_range(kx);
                    if wv == 0.0 || lo >= hi {
                        continue;
                    }
                    for oy in 0..g.h_out {
                        let Some(iy) = g.iy(oy, ky) else { continue };
                        let orow = &mut oplane[oy * g.w_out..(oy + 1) * g.w_out];
                        let irow = &iplane[iy * g.w..(iy + 1) * g.w];
                        if g.stride == 1 {
                            let start = lo + kx - g.padding;
                            for (o, i) in orow[lo..hi].iter_mut().zip(&irow[start..start + hi - lo])
                            {
                                *o += wv * i;
                            }
                        } else {
                            for ox in lo..hi {
                                orow[ox] += wv * irow[ox * g.stride + kx - g.padding];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates input, weight and bias gradients for one conv call.
pub fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    wt: &[f64],
    gout: &[f64],
    mut gx: Option<&mut [f64]>,
    mut gw: Option<&mut [f64]>,
    gb: Option<&mut [f64]>,
) {
    let cin_g = g.cin_per_group();
    let cout_g = g.cout_per_group();
    let plane_out = g.h_out * g.w_out;
    if let Some(gb) = gb {
        for co in 0..g.c_out {
            gb[co] += gout[co * plane_out..(co + 1) * plane_out]
                .iter()
                .sum::<f64>();
        }
    }
    for co in 0..g.c_out {
        let grp = co / cout_g;
        let oplane = &gout[co * plane_out..(co + 1) * plane_out];
        for cl in 0..cin_g {
            let ci = grp * cin_g + cl;
            let ioff = ci * g.h * g.w;
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let widx = ((co * cin_g + cl) * g.kh + ky) * g.kw + kx;
                    let wv = wt[widx];
                    let (lo, hi) = g.ox_range(kx);
                    if lo >= hi {
                        continue;
                    }
                    let mut wacc = 0.0;
                    for oy in 0..g.h_out {
                        let Some(iy) = g.iy(oy, ky) else { continue };
                        let orow = &oplane[oy * g.w_out..(oy + 1) * g.w_out];
                        let rbase = ioff + iy * g.w;
                        if g.stride == 1 {
                            let start = rbase + lo + kx - g.padding;
                            let len = hi - lo;
                            if gw.is_some() {
                                wacc += orow[lo..hi]
                                    .iter()
                                    .zip(&x[start..start + len])
                                    .map(|(o, i)| o * i)
                                    .sum::<f64>();
                            }
                            if let Some(gx) = gx.as_deref_mut() {
                                for (gi, o) in gx[start..start + len].iter_mut().zip(&orow[lo..hi])
                                {
                                    *gi += wv * o;
                                }
                            }
                        } else {
                            for (ox, &o) in orow.iter().enumerate().take(hi).skip(lo) {
                                let idx = rbase + ox * g.stride + kx - g.padding;
                                wacc += o * x[idx];
                                if let Some(gx) = gx.as_deref_mut() {
                                    gx[idx] += wv * o;
                                }
                            }
                        }
                    }
                    if let Some(gw) = gw.as_deref_mut() {
                        gw[widx] += wacc;
                    }
                }
            }
        }
    }
}

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    let u = GELU_K0 * (x + GELU_K1 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_K0 * (x + GELU_K1 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K0 * (1.0 + 3.0 * GELU_K1 * x * x)
}

const GELU_K0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K1: f64 = 0.044715;
