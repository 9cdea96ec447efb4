//! Three-layer 3×3 convolutional denoiser with hand-written backpropagation.
//!
//! ```text
//! z  = c_in·x
//! h1 = conv(z; W1) + b1 + e·c_noise + E[label]     a1 = tanh(h1)
//! h2 = conv(a1; W2) + b2                           a2 = tanh(h2)
//! F  = conv(a2; W3) + b3
//! D  = c_skip·x + c_out·F
//! ```
//!
//! Convolutions are zero-padded cross-correlations. All parameters live in
//! one flat vector; gradients use the same layout.

use std::ops::Range;

use rand::Rng;

use super::{Denoiser, Preconditioning};
use crate::error::{invalid, Error, Result};
use crate::field::ImageField;
use crate::rng::standard_normal;

/// Largest number of class embeddings.
pub const MAX_CLASSES: usize = 8;
/// Parameter budget of the network.
pub const MAX_PARAMS: usize = 50_000;

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    hidden: usize,
    classes: usize,
    w1: Range<usize>,
    b1: Range<usize>,
    sigma_embed: Range<usize>,
    class_embed: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
    w3: Range<usize>,
    b3: Range<usize>,
}

impl Layout {
    fn new(hidden: usize, classes: usize) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        Self {
            hidden,
            classes,
            w1: take(hidden * 9),
            b1: take(hidden),
            sigma_embed: take(hidden),
            class_embed: take(classes * hidden),
            w2: take(hidden * hidden * 9),
            b2: take(hidden),
            w3: take(hidden * 9),
            b3: take(1),
        }
    }

    fn len(&self) -> usize {
        self.b3.end
    }

    /// `(name, shape, range)` of each tensor in storage order.
    fn tensors(&self) -> Vec<(&'static str, Vec<usize>, Range<usize>)> {
        let c = self.hidden;
        vec![
            ("conv1.weight", vec![c, 1, 3, 3], self.w1.clone()),
            ("conv1.bias", vec![c], self.b1.clone()),
            ("sigma_embed", vec![c], self.sigma_embed.clone()),
            (
                "class_embed",
                vec![self.classes, c],
                self.class_embed.clone(),
            ),
            ("conv2.weight", vec![c, c, 3, 3], self.w2.clone()),
            ("conv2.bias", vec![c], self.b2.clone()),
            ("conv3.weight", vec![1, c, 3, 3], self.w3.clone()),
            ("conv3.bias", vec![1], self.b3.clone()),
        ]
    }
}

/// Weights of the convolutional denoiser plus its data scale `σ_data`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvDenoiserParams {
    layout: Layout,
    sigma_data: f64,
    values: Vec<f64>,
}

impl ConvDenoiserParams {
    /// All-zero network: its output is `c_skip(σ)·x`.
    pub fn zeros(hidden: usize, classes: usize, sigma_data: f64) -> Result<Self> {
        if hidden == 0 {
            return Err(invalid("hidden", "need at least one hidden channel"));
        }
        if classes > MAX_CLASSES {
            return Err(invalid(
                "classes",
                format!("at most {MAX_CLASSES} classes, got {classes}"),
            ));
        }
        if !(sigma_data > 0.0) || !sigma_data.is_finite() {
            return Err(invalid(
                "sigma_data",
                format!("must be positive, got {sigma_data}"),
            ));
        }
        let layout = Layout::new(hidden, classes);
        if layout.len() > MAX_PARAMS {
            return Err(invalid(
                "hidden",
                format!(
                    "{} parameters exceed the budget of {MAX_PARAMS}",
                    layout.len()
                ),
            ));
        }
        let values = vec![0.0; layout.len()];
        Ok(Self {
            layout,
            sigma_data,
            values,
        })
    }

    /// Gaussian fan-in initialisation; biases and embeddings start at zero.
    pub fn init<R: Rng + ?Sized>(
        hidden: usize,
        classes: usize,
        sigma_data: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::zeros(hidden, classes, sigma_data)?;
        let fan = |n: usize| (1.0 / (9.0 * n as f64)).sqrt();
        let l = p.layout.clone();
        for (range, scale) in [(l.w1, fan(1)), (l.w2, fan(hidden)), (l.w3, fan(hidden))] {
            for v in &mut p.values[range] {
                *v = scale * standard_normal(rng);
            }
        }
        Ok(p)
    }

    /// Same architecture with every parameter drawn from `N(0, scale²)`.
    pub fn randomized<R: Rng + ?Sized>(&self, scale: f64, rng: &mut R) -> Self {
        let mut p = self.clone();
        for v in &mut p.values {
            *v = scale * standard_normal(rng);
        }
        p
    }

    pub fn hidden(&self) -> usize {
        self.layout.hidden
    }

    pub fn classes(&self) -> usize {
        self.layout.classes
    }

    pub fn sigma_data(&self) -> f64 {
        self.sigma_data
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Flat parameter vector; gradients share this layout.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Named tensors `(name, shape, data)` in storage order.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        self.layout
            .tensors()
            .into_iter()
            .map(|(n, s, r)| (n, s, &self.values[r]))
            .collect()
    }

    /// Name of the tensor holding flat parameter `index`.
    pub fn tensor_name(&self, index: usize) -> Option<&'static str> {
        self.layout
            .tensors()
            .into_iter()
            .find(|(_, _, r)| r.contains(&index))
            .map(|(n, _, _)| n)
    }

    /// Rebuilds parameters from named tensors, checking every shape.
    pub fn from_tensors(
        sigma_data: f64,
        tensors: &[(String, Vec<usize>, Vec<f64>)],
    ) -> Result<Self> {
        let find = |name: &str| {
            tensors
                .iter()
                .find(|(n, _, _)| n == name)
                .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))
        };
        let (_, w1_shape, _) = find("conv1.weight")?;
        let (_, cls_shape, _) = find("class_embed")?;
        if w1_shape.len() != 4 || cls_shape.len() != 2 {
            return Err(Error::Format("malformed tensor ranks".into()));
        }
        let mut p = Self::zeros(w1_shape[0], cls_shape[0], sigma_data)?;
        for (name, shape, range) in p.layout.tensors() {
            let (_, got_shape, data) = find(name)?;
            if *got_shape != shape || data.len() != range.len() {
                return Err(Error::Format(format!(
                    "tensor `{name}` has shape {got_shape:?}, expected {shape:?}"
                )));
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!(
                    "tensor `{name}` holds non-finite values"
                )));
            }
            p.values[range].copy_from_slice(data);
        }
        Ok(p)
    }

    fn check_input(&self, x: &ImageField, label: Option<usize>) -> Result<()> {
        if let Some(l) = label {
            if l >= self.layout.classes {
                return Err(invalid(
                    "label",
                    format!("class {l} out of range for {} classes", self.layout.classes),
                ));
            }
        }
        if !x.is_finite() {
            return Err(Error::InvalidData("non-finite network input".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite network parameters".into()));
        }
        Ok(())
    }

    fn forward(&self, x: &ImageField, sigma: f64, label: Option<usize>) -> Result<Forward> {
        self.check_input(x, label)?;
        let pre = Preconditioning::new(sigma, self.sigma_data)?;
        let (h, w) = x.shape();
        let px = h * w;
        let c = self.layout.hidden;
        let v = &self.values;
        let l = &self.layout;

        let z: Vec<f64> = x.values().iter().map(|x| pre.c_in * x).collect();

        let mut a1 = vec![0.0; c * px];
        for ch in 0..c {
            let mut shift = v[l.b1.start + ch] + v[l.sigma_embed.start + ch] * pre.c_noise;
            if let Some(lab) = label {
                shift += v[l.class_embed.start + lab * c + ch];
            }
            let out = &mut a1[ch * px..(ch + 1) * px];
            out.fill(shift);
            conv3x3_acc(&z, &v[l.w1.start + ch * 9..][..9], h, w, out);
            out.iter_mut().for_each(|o| *o = o.tanh());
        }

        let mut a2 = vec![0.0; c * px];
        for d in 0..c {
            let out = &mut a2[d * px..(d + 1) * px];
            out.fill(v[l.b2.start + d]);
            for ch in 0..c {
                let k = &v[l.w2.start + (d * c + ch) * 9..][..9];
                conv3x3_acc(&a1[ch * px..(ch + 1) * px], k, h, w, out);
            }
            out.iter_mut().for_each(|o| *o = o.tanh());
        }

        let mut raw = vec![v[l.b3.start]; px];
        for d in 0..c {
            conv3x3_acc(
                &a2[d * px..(d + 1) * px],
                &v[l.w3.start + d * 9..][..9],
                h,
                w,
                &mut raw,
            );
        }

        let out = x
            .values()
            .iter()
            .zip(&raw)
            .map(|(x, f)| pre.c_skip * x + pre.c_out * f)
            .collect();
        Ok(Forward {
            pre,
            z,
            a1,
            a2,
            output: ImageField::from_raw(h, w, out),
        })
    }

    /// Denoised estimate `D(x, σ)`.
    pub fn eval(&self, x: &ImageField, sigma: f64, label: Option<usize>) -> Result<ImageField> {
        Ok(self.forward(x, sigma, label)?.output)
    }

    /// Pixel-mean squared error `‖D(x_t, σ) − x‖²/P` and its exact gradient.
    pub fn loss_and_grad(
        &self,
        clean: &ImageField,
        x_t: &ImageField,
        sigma: f64,
        label: Option<usize>,
    ) -> Result<(f64, Vec<f64>)> {
        clean.ensure_same_shape(x_t)?;
        let fwd = self.forward(x_t, sigma, label)?;
        let px = clean.len() as f64;
        let resid: Vec<f64> = fwd
            .output
            .values()
            .iter()
            .zip(clean.values())
            .map(|(d, x)| d - x)
            .collect();
        let loss = resid.iter().map(|r| r * r).sum::<f64>() / px;
        let g_out: Vec<f64> = resid.iter().map(|r| 2.0 * r / px).collect();
        let grad = self.backward(&fwd, &g_out, x_t.shape(), label);
        Ok((loss, grad))
    }

    /// Loss alone; used by finite-difference checks.
    pub fn loss(
        &self,
        clean: &ImageField,
        x_t: &ImageField,
        sigma: f64,
        label: Option<usize>,
    ) -> Result<f64> {
        clean.ensure_same_shape(x_t)?;
        let out = self.eval(x_t, sigma, label)?;
        Ok(out
            .values()
            .iter()
            .zip(clean.values())
            .map(|(d, x)| (d - x) * (d - x))
            .sum::<f64>()
            / clean.len() as f64)
    }

    fn backward(
        &self,
        fwd: &Forward,
        g_out: &[f64],
        (h, w): (usize, usize),
        label: Option<usize>,
    ) -> Vec<f64> {
        let px = h * w;
        let c = self.layout.hidden;
        let l = &self.layout;
        let v = &self.values;
        let mut g = vec![0.0; v.len()];

        let g_raw: Vec<f64> = g_out.iter().map(|g| fwd.pre.c_out * g).collect();
        g[l.b3.start] = g_raw.iter().sum();

        // Layer 3 → gradient w.r.t. h2 through tanh.
        let mut g_h2 = vec![0.0; c * px];
        for d in 0..c {
            let a2 = &fwd.a2[d * px..(d + 1) * px];
            conv3x3_kernel_grad(a2, &g_raw, h, w, &mut g[l.w3.start + d * 9..][..9]);
            let gh = &mut g_h2[d * px..(d + 1) * px];
            conv3x3_input_grad(&g_raw, &v[l.w3.start + d * 9..][..9], h, w, gh);
            for (gv, a) in gh.iter_mut().zip(a2) {
                *gv *= 1.0 - a * a;
            }
        }

        let mut g_h1 = vec![0.0; c * px];
        for d in 0..c {
            let gh2 = &g_h2[d * px..(d + 1) * px];
            g[l.b2.start + d] = gh2.iter().sum();
            for ch in 0..c {
                let idx = l.w2.start + (d * c + ch) * 9;
                conv3x3_kernel_grad(
                    &fwd.a1[ch * px..(ch + 1) * px],
                    gh2,
                    h,
                    w,
                    &mut g[idx..idx + 9],
                );
                conv3x3_input_grad(
                    gh2,
                    &v[idx..idx + 9],
                    h,
                    w,
                    &mut g_h1[ch * px..(ch + 1) * px],
                );
            }
        }

        for ch in 0..c {
            let a1 = &fwd.a1[ch * px..(ch + 1) * px];
            let gh = &mut g_h1[ch * px..(ch + 1) * px];
            for (gv, a) in gh.iter_mut().zip(a1) {
                *gv *= 1.0 - a * a;
            }
            let total: f64 = gh.iter().sum();
            g[l.b1.start + ch] = total;
            g[l.sigma_embed.start + ch] = total * fwd.pre.c_noise;
            if let Some(lab) = label {
                g[l.class_embed.start + lab * c + ch] = total;
            }
            conv3x3_kernel_grad(&fwd.z, gh, h, w, &mut g[l.w1.start + ch * 9..][..9]);
        }
        g
    }
}

impl Denoiser for ConvDenoiserParams {
    fn denoise(&self, x: &ImageField, sigma: f64, label: Option<usize>) -> Result<ImageField> {
        self.eval(x, sigma, label)
    }
}

struct Forward {
    pre: Preconditioning,
    z: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    output: ImageField,
}

/// Row ranges `i` for which `i + d` stays inside `0..n`.
#[inline]
fn valid(d: isize, n: usize) -> Range<usize> {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)).max(0) as usize;
    lo..hi.max(lo)
}

/// `out[i, j] += Σ k[a, b]·input[i + a − 1, j + b − 1]` with zero padding.
fn conv3x3_acc(input: &[f64], k: &[f64], h: usize, w: usize, out: &mut [f64]) {
    for a in 0..3 {
        let di = a as isize - 1;
        for b in 0..3 {
            let dj = b as isize - 1;
            let kv = k[a * 3 + b];
            if kv == 0.0 {
                continue;
            }
            let cols = valid(dj, w);
            for i in valid(di, h) {
                let src = ((i as isize + di) as usize) * w;
                let o = &mut out[i * w + cols.start..i * w + cols.end];
                let s = &input[(src as isize + cols.start as isize + dj) as usize..][..cols.len()];
                for (ov, sv) in o.iter_mut().zip(s) {
                    *ov += kv * sv;
                }
            }
        }
    }
}

/// `gk[a, b] += Σ g_out[i, j]·input[i + a − 1, j + b − 1]`.
fn conv3x3_kernel_grad(input: &[f64], g_out: &[f64], h: usize, w: usize, gk: &mut [f64]) {
    for a in 0..3 {
        let di = a as isize - 1;
        for b in 0..3 {
            let dj = b as isize - 1;
            let cols = valid(dj, w);
            let mut acc = 0.0;
            for i in valid(di, h) {
                let src = ((i as isize + di) as usize) * w;
                let g = &g_out[i * w + cols.start..i * w + cols.end];
                let s = &input[(src as isize + cols.start as isize + dj) as usize..][..cols.len()];
                acc += g.iter().zip(s).map(|(g, s)| g * s).sum::<f64>();
            }
            gk[a * 3 + b] += acc;
        }
    }
}

/// `g_in[i + a − 1, j + b − 1] += k[a, b]·g_out[i, j]`.
fn conv3x3_input_grad(g_out: &[f64], k: &[f64], h: usize, w: usize, g_in: &mut [f64]) {
    for a in 0..3 {
        let di = a as isize - 1;
        for b in 0..3 {
            let dj = b as isize - 1;
            let kv = k[a * 3 + b];
            if kv == 0.0 {
                continue;
            }
            let cols = valid(dj, w);
            for i in valid(di, h) {
                let dst = ((i as isize + di) as usize) * w;
                let g = &g_out[i * w + cols.start..i * w + cols.end];
                let d =
                    &mut g_in[(dst as isize + cols.start as isize + dj) as usize..][..cols.len()];
                for (dv, gv) in d.iter_mut().zip(g) {
                    *dv += kv * gv;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;

    fn naive_conv(input: &[f64], k: &[f64], h: usize, w: usize) -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for i in 0..h as isize {
            for j in 0..w as isize {
                let mut s = 0.0;
                for a in -1..=1isize {
                    for b in -1..=1isize {
                        let (y, x) = (i + a, j + b);
                        if y >= 0 && y < h as isize && x >= 0 && x < w as isize {
                            s += k[((a + 1) * 3 + b + 1) as usize]
                                * input[(y * w as isize + x) as usize];
                        }
                    }
                }
                out[(i * w as isize + j) as usize] = s;
            }
        }
        out
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let mut rng = RandomSource::new(5).stream(0);
        for &(h, w) in &[(1, 1), (2, 5), (6, 4), (7, 7)] {
            let input: Vec<f64> = (0..h * w).map(|_| standard_normal(&mut rng)).collect();
            let k: Vec<f64> = (0..9).map(|_| standard_normal(&mut rng)).collect();
            let mut out = vec![0.0; h * w];
            conv3x3_acc(&input, &k, h, w, &mut out);
            let want = naive_conv(&input, &k, h, w);
            for (a, b) in out.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
            // Adjointness: <conv(x), g> = <x, convᵀ(g)> and = <k, kernel_grad(x, g)>.
            let g: Vec<f64> = (0..h * w).map(|_| standard_normal(&mut rng)).collect();
            let lhs: f64 = out.iter().zip(&g).map(|(a, b)| a * b).sum();
            let mut gi = vec![0.0; h * w];
            conv3x3_input_grad(&g, &k, h, w, &mut gi);
            let rhs: f64 = input.iter().zip(&gi).map(|(a, b)| a * b).sum();
            let mut gk = vec![0.0; 9];
            conv3x3_kernel_grad(&input, &g, h, w, &mut gk);
            let rhs2: f64 = k.iter().zip(&gk).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10 && (lhs - rhs2).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_network_is_skip_connection() {
        let p = ConvDenoiserParams::zeros(4, 2, 0.5).unwrap();
        let x = ImageField::from_fn(5, 6, |i, j| (i as f64 - j as f64) / 3.0);
        let pre = Preconditioning::new(0.8, 0.5).unwrap();
        assert_eq!(p.eval(&x, 0.8, Some(1)).unwrap(), x.scaled(pre.c_skip));
    }

    #[test]
    fn evaluation_is_deterministic_and_checks_inputs() {
        let mut rng = RandomSource::new(9).stream(0);
        let p = ConvDenoiserParams::init(6, 3, 0.5, &mut rng).unwrap();
        let x = ImageField::from_fn(8, 8, |_, _| standard_normal(&mut rng));
        let a = p.eval(&x, 1.3, Some(2)).unwrap();
        let b = p.eval(&x, 1.3, Some(2)).unwrap();
        assert!(a
            .values()
            .iter()
            .zip(b.values())
            .all(|(u, v)| u.to_bits() == v.to_bits()));
        assert!(p.eval(&x, 1.3, Some(3)).is_err());
        assert!(p.eval(&x, -1.0, None).is_err());
        assert!(ConvDenoiserParams::zeros(4, MAX_CLASSES + 1, 0.5).is_err());
        assert!(ConvDenoiserParams::zeros(80, 8, 0.5).is_err());
        assert_eq!(ConvDenoiserParams::zeros(8, 8, 0.5).unwrap().len(), 809);
    }

    #[test]
    fn gradient_matches_central_differences_everywhere() {
        let mut rng = RandomSource::new(21).stream(0);
        let p = ConvDenoiserParams::init(3, 2, 0.5, &mut rng)
            .unwrap()
            .randomized(0.4, &mut rng);
        let clean = ImageField::from_fn(5, 4, |_, _| 0.5 * standard_normal(&mut rng));
        let x_t = clean
            .add_scaled(
                &ImageField::from_fn(5, 4, |_, _| standard_normal(&mut rng)),
                0.9,
            )
            .unwrap();
        let (_, grad) = p.loss_and_grad(&clean, &x_t, 0.9, Some(1)).unwrap();
        let delta = 1e-5;
        for idx in 0..p.len() {
            let mut hi = p.clone();
            hi.values_mut()[idx] += delta;
            let mut lo = p.clone();
            lo.values_mut()[idx] -= delta;
            let fd = (hi.loss(&clean, &x_t, 0.9, Some(1)).unwrap()
                - lo.loss(&clean, &x_t, 0.9, Some(1)).unwrap())
                / (2.0 * delta);
            let err = (fd - grad[idx]).abs() / fd.abs().max(grad[idx].abs()).max(1e-8);
            assert!(
                err < 1e-4,
                "param {idx} ({:?}): fd {fd} vs {}",
                p.tensor_name(idx),
                grad[idx]
            );
        }
    }

    #[test]
    fn unused_class_rows_get_no_gradient() {
        let mut rng = RandomSource::new(2).stream(0);
        let p = ConvDenoiserParams::init(2, 3, 0.5, &mut rng).unwrap();
        let x = ImageField::from_fn(4, 4, |_, _| standard_normal(&mut rng));
        let (_, g) = p.loss_and_grad(&x, &x, 0.5, None).unwrap();
        assert!(g[p.layout.class_embed.clone()].iter().all(|v| *v == 0.0));
    }
}
