//! One causal self-attention block:
//! `x_j = E[i_j] + P[j]`, `c_j = sum_{l<=j} softmax_l(q_j . k_l / sqrt(d)) v_l`,
//! `h_j = tanh(x_j + c_j)`.

use super::Layout;

pub(crate) struct Cache {
    pub x: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// Row-major `len x len`, zero above the diagonal.
    pub a: Vec<f64>,
    pub h: Vec<f64>,
}

struct Offsets {
    pos: usize,
    wq: usize,
    wk: usize,
    wv: usize,
}

fn offsets(l: &Layout) -> Offsets {
    let d = l.d;
    let pos = l.enc;
    let wq = pos + l.max_len * d;
    Offsets {
        pos,
        wq,
        wk: wq + d * d,
        wv: wq + 2 * d * d,
    }
}

fn project(w: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o = w[r * d..(r + 1) * d]
            .iter()
            .zip(x)
            .map(|(a, b)| a * b)
            .sum();
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn forward(l: &Layout, p: &[f64], inputs: &[u32], noise: Option<&[f64]>) -> Cache {
    let d = l.d;
    let len = inputs.len();
    assert!(len <= l.max_len, "sequence longer than positional table");
    let o = offsets(l);
    let scale = 1.0 / (d as f64).sqrt();
    let mut x = vec![0.0; len * d];
    let (mut q, mut k, mut v) = (vec![0.0; len * d], vec![0.0; len * d], vec![0.0; len * d]);
    for (j, &item) in inputs.iter().enumerate() {
        let e = l.emb + item as usize * d;
        for f in 0..d {
            x[j * d + f] = p[e + f] + p[o.pos + j * d + f];
        }
        if let Some(nz) = noise {
            for f in 0..d {
                x[j * d + f] += nz[j * d + f];
            }
        }
        let xj = &x[j * d..(j + 1) * d];
        project(&p[o.wq..o.wq + d * d], xj, &mut q[j * d..(j + 1) * d]);
        project(&p[o.wk..o.wk + d * d], xj, &mut k[j * d..(j + 1) * d]);
        project(&p[o.wv..o.wv + d * d], xj, &mut v[j * d..(j + 1) * d]);
    }
    let mut a = vec![0.0; len * len];
    let mut h = vec![0.0; len * d];
    for j in 0..len {
        let qj = &q[j * d..(j + 1) * d];
        let row = &mut a[j * len..j * len + j + 1];
        for (lx, r) in row.iter_mut().enumerate() {
            *r = dot(qj, &k[lx * d..(lx + 1) * d]) * scale;
        }
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for r in row.iter_mut() {
            *r = (*r - m).exp();
            s += *r;
        }
        for r in row.iter_mut() {
            *r /= s;
        }
        for f in 0..d {
            let mut c = 0.0;
            for lx in 0..=j {
                c += a[j * len + lx] * v[lx * d + f];
            }
            h[j * d + f] = (x[j * d + f] + c).tanh();
        }
    }
    Cache { x, q, k, v, a, h }
}

pub(crate) fn backward(
    l: &Layout,
    p: &[f64],
    inputs: &[u32],
    c: &Cache,
    dh: &[f64],
    grad: &mut [f64],
    dx_out: Option<&mut [f64]>,
) {
    let d = l.d;
    let len = inputs.len();
    let o = offsets(l);
    let scale = 1.0 / (d as f64).sqrt();
    let mut dx = vec![0.0; len * d];
    let mut dq = vec![0.0; len * d];
    let mut dk = vec![0.0; len * d];
    let mut dv = vec![0.0; len * d];
    let mut dz = vec![0.0; d];
    let mut da = vec![0.0; len];
    for j in 0..len {
        let mut any = false;
        for f in 0..d {
            let hv = c.h[j * d + f];
            dz[f] = dh[j * d + f] * (1.0 - hv * hv);
            any |= dz[f] != 0.0;
        }
        if !any {
            continue;
        }
        for f in 0..d {
            dx[j * d + f] += dz[f];
        }
        let arow = &c.a[j * len..j * len + j + 1];
        for lx in 0..=j {
            let w = arow[lx];
            for f in 0..d {
                dv[lx * d + f] += w * dz[f];
            }
            da[lx] = dot(&dz, &c.v[lx * d..(lx + 1) * d]);
        }
        let mean: f64 = (0..=j).map(|lx| arow[lx] * da[lx]).sum();
        for lx in 0..=j {
            let g = arow[lx] * (da[lx] - mean) * scale;
            if g == 0.0 {
                continue;
            }
            for f in 0..d {
                dq[j * d + f] += g * c.k[lx * d + f];
                dk[lx * d + f] += g * c.q[j * d + f];
            }
        }
    }
    for j in 0..len {
        let xj = &c.x[j * d..(j + 1) * d];
        for (off, dproj) in [(o.wq, &dq), (o.wk, &dk), (o.wv, &dv)] {
            let g = &dproj[j * d..(j + 1) * d];
            for r in 0..d {
                if g[r] == 0.0 {
                    continue;
                }
                for f in 0..d {
                    grad[off + r * d + f] += g[r] * xj[f];
                    dx[j * d + f] += g[r] * p[off + r * d + f];
                }
            }
        }
        let e = l.emb + inputs[j] as usize * d;
        for f in 0..d {
            grad[e + f] += dx[j * d + f];
            grad[o.pos + j * d + f] += dx[j * d + f];
        }
    }
    if let Some(out) = dx_out {
        out.copy_from_slice(&dx);
    }
}
