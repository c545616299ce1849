//! Elman encoder: `h_j = tanh(W x_j + U h_{j-1} + b)`, `h_{-1} = 0`.

use super::Layout;

pub(crate) struct Cache {
    pub x: Vec<f64>,
    pub h: Vec<f64>,
}

fn matvec_add(w: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * d..(r + 1) * d];
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// out += W^T g
fn matvec_t_add(w: &[f64], g: &[f64], out: &mut [f64]) {
    let d = g.len();
    for (r, &gr) in g.iter().enumerate() {
        if gr == 0.0 {
            continue;
        }
        let row = &w[r * d..(r + 1) * d];
        for (o, a) in out.iter_mut().zip(row) {
            *o += gr * a;
        }
    }
}

/// dW += g x^T
fn outer_add(dw: &mut [f64], g: &[f64], x: &[f64]) {
    let d = x.len();
    for (r, &gr) in g.iter().enumerate() {
        if gr == 0.0 {
            continue;
        }
        let row = &mut dw[r * d..(r + 1) * d];
        for (o, a) in row.iter_mut().zip(x) {
            *o += gr * a;
        }
    }
}

pub(crate) fn forward(l: &Layout, p: &[f64], inputs: &[u32], noise: Option<&[f64]>) -> Cache {
    let d = l.d;
    let len = inputs.len();
    let w = &p[l.enc..l.enc + d * d];
    let u = &p[l.enc + d * d..l.enc + 2 * d * d];
    let b = &p[l.enc + 2 * d * d..l.enc + 2 * d * d + d];
    let mut x = vec![0.0; len * d];
    let mut h = vec![0.0; len * d];
    for (j, &item) in inputs.iter().enumerate() {
        let e = &p[l.emb + item as usize * d..l.emb + (item as usize + 1) * d];
        let xj = &mut x[j * d..(j + 1) * d];
        xj.copy_from_slice(e);
        if let Some(nz) = noise {
            for (a, n) in xj.iter_mut().zip(&nz[j * d..(j + 1) * d]) {
                *a += n;
            }
        }
        let mut a = b.to_vec();
        matvec_add(w, &x[j * d..(j + 1) * d], &mut a);
        if j > 0 {
            matvec_add(u, &h[(j - 1) * d..j * d], &mut a);
        }
        for (hv, av) in h[j * d..(j + 1) * d].iter_mut().zip(&a) {
            *hv = av.tanh();
        }
    }
    Cache { x, h }
}

pub(crate) fn backward(
    l: &Layout,
    p: &[f64],
    inputs: &[u32],
    c: &Cache,
    dh: &[f64],
    grad: &mut [f64],
    mut dx_out: Option<&mut [f64]>,
) {
    let d = l.d;
    let (w_off, u_off, b_off) = (l.enc, l.enc + d * d, l.enc + 2 * d * d);
    let w = &p[w_off..w_off + d * d];
    let u = &p[u_off..u_off + d * d];
    let mut carry = vec![0.0; d];
    let mut da = vec![0.0; d];
    let mut dx = vec![0.0; d];
    for j in (0..inputs.len()).rev() {
        let hj = &c.h[j * d..(j + 1) * d];
        for k in 0..d {
            da[k] = (dh[j * d + k] + carry[k]) * (1.0 - hj[k] * hj[k]);
        }
        outer_add(
            &mut grad[w_off..w_off + d * d],
            &da,
            &c.x[j * d..(j + 1) * d],
        );
        if j > 0 {
            outer_add(
                &mut grad[u_off..u_off + d * d],
                &da,
                &c.h[(j - 1) * d..j * d],
            );
        }
        for k in 0..d {
            grad[b_off + k] += da[k];
        }
        dx.fill(0.0);
        matvec_t_add(w, &da, &mut dx);
        carry.fill(0.0);
        matvec_t_add(u, &da, &mut carry);
        let e = l.emb + inputs[j] as usize * d;
        for k in 0..d {
            grad[e + k] += dx[k];
        }
        if let Some(out) = dx_out.as_deref_mut() {
            out[j * d..(j + 1) * d].copy_from_slice(&dx);
        }
    }
}
