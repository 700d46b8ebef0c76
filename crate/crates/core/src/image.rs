//! Images, kernels, and symmetric-boundary convolution together with the
//! exact adjoint of the padded convolution operator.
//!
//! Convolution here is true convolution (the kernel is flipped relative to
//! cross-correlation). Out-of-range reads reflect about pixel centers, so
//! the value at index -1 equals the value at index 0. The adjoint is the
//! transpose of that padded linear operator, realized by scatter-adds of the
//! reflected contributions; it coincides with convolution by the 180-degree
//! rotated kernel only away from the boundary.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Largest supported width/height. Keeps all padded index arithmetic far
/// away from `isize` overflow, which discharges the dimension-overflow
/// error case at construction time.
pub const MAX_DIM: usize = 1 << 20;
/// Largest supported pixel count.
pub const MAX_AREA: usize = 1 << 28;
/// Largest supported kernel size.
pub const MAX_KERNEL: usize = 99;

/// A grayscale image: row-major `f64` intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image, validating dimensions, buffer length, and finiteness.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        let area = checked_area(width, height)?;
        if data.len() != area {
            return Err(Error::DataLength { expected: area, actual: data.len() });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Image { width, height, data })
    }

    /// All-zero image of the given size.
    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        let area = checked_area(width, height)?;
        Ok(Image { width, height, data: vec![0.0; area] })
    }

    /// Constant image of the given size.
    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFinite);
        }
        let area = checked_area(width, height)?;
        Ok(Image { width, height, data: vec![value; area] })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Elementwise map into a new image.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Standard inner product `sum_p self[p] * other[p]`.
    pub fn dot(&self, other: &Image) -> f64 {
        debug_assert!(self.same_size(other));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// In-place `self -= other`.
    pub fn sub_assign(&mut self, other: &Image) {
        debug_assert!(self.same_size(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
    }

    /// In-place `self *= s`.
    pub fn scale_assign(&mut self, s: f64) {
        for a in self.data.iter_mut() {
            *a *= s;
        }
    }
}

fn checked_area(width: usize, height: usize) -> Result<usize> {
    if width == 0 || height == 0 || width > MAX_DIM || height > MAX_DIM {
        return Err(Error::BadDimensions { width, height });
    }
    match width.checked_mul(height) {
        Some(area) if area <= MAX_AREA => Ok(area),
        _ => Err(Error::BadDimensions { width, height }),
    }
}

/// A small square convolution kernel with odd, center-anchored size.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    coeffs: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, coeffs: Vec<f64>) -> Result<Self> {
        if size == 0 || size % 2 == 0 || size > MAX_KERNEL {
            return Err(Error::BadKernelSize { size });
        }
        let n = size * size;
        if coeffs.len() != n {
            return Err(Error::DataLength { expected: n, actual: coeffs.len() });
        }
        if !coeffs.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Kernel { size, coeffs })
    }

    /// The size-1 identity element of convolution (center 1, rest 0).
    pub fn delta(size: usize) -> Result<Self> {
        if size == 0 || size % 2 == 0 || size > MAX_KERNEL {
            return Err(Error::BadKernelSize { size });
        }
        let mut coeffs = vec![0.0; size * size];
        coeffs[(size / 2) * size + size / 2] = 1.0;
        Ok(Kernel { size, coeffs })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff_sum(&self) -> f64 {
        self.coeffs.iter().sum()
    }
}

/// Rotates a kernel by 180 degrees: `out[i][j] = in[m-1-i][m-1-j]`.
pub fn rotate180(k: &Kernel) -> Kernel {
    let m = k.size;
    let mut coeffs = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            coeffs[i * m + j] = k.coeffs[(m - 1 - i) * m + (m - 1 - j)];
        }
    }
    Kernel { size: m, coeffs }
}

/// Reflects an index about pixel centers into `[0, n)`; the value at -1 maps
/// to 0. Repeats the reflection when the kernel overhangs a tiny image.
#[inline]
fn mirror(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Convolves `x` with `k` under the symmetric boundary condition.
///
/// Output has the dimensions of `x`. Interior pixels avoid the mirror
/// lookup entirely, so each output pixel is produced by exactly one pass
/// over the kernel taps in a fixed order.
pub fn conv2d_sym(x: &Image, k: &Kernel) -> Image {
    let (w, h) = (x.width, x.height);
    let m = k.size;
    let c = (m / 2) as isize;
    let mut out = Image { width: w, height: h, data: vec![0.0; w * h] };

    let interior_x = m <= w;
    let interior_y = m <= h;

    for i in 0..h {
        let top_border = (i as isize) < c || (i as isize) + c >= h as isize;
        for j in 0..w {
            let side_border = (j as isize) < c || (j as isize) + c >= w as isize;
            let mut acc = 0.0;
            if !(top_border || side_border) && interior_x && interior_y {
                // interior: i+c-a and j+c-b are guaranteed in range
                let base_i = i + c as usize;
                let base_j = j + c as usize;
                for a in 0..m {
                    let row = (base_i - a) * w;
                    let krow = a * m;
                    for b in 0..m {
                        acc += k.coeffs[krow + b] * x.data[row + base_j - b];
                    }
                }
            } else {
                for a in 0..m {
                    let yy = mirror(i as isize + c - a as isize, h);
                    let krow = a * m;
                    for b in 0..m {
                        let xx = mirror(j as isize + c - b as isize, w);
                        acc += k.coeffs[krow + b] * x.data[yy * w + xx];
                    }
                }
            }
            out.data[i * w + j] = acc;
        }
    }
    out
}

/// Applies the exact transpose of the `conv2d_sym(., k)` operator.
///
/// Satisfies `<conv2d_sym(x, k), y> == <x, conv2d_adjoint(y, k)>` for every
/// x, y of matching size. Implemented as a scatter-add of each output tap
/// back through the mirror map, in the same fixed order as the forward pass.
pub fn conv2d_adjoint(y: &Image, k: &Kernel) -> Image {
    let (w, h) = (y.width, y.height);
    let m = k.size;
    let c = (m / 2) as isize;
    let mut out = Image { width: w, height: h, data: vec![0.0; w * h] };

    for i in 0..h {
        for j in 0..w {
            let v = y.data[i * w + j];
            for a in 0..m {
                let yy = mirror(i as isize + c - a as isize, h);
                let krow = a * m;
                for b in 0..m {
                    let xx = mirror(j as isize + c - b as isize, w);
                    out.data[yy * w + xx] += k.coeffs[krow + b] * v;
                }
            }
        }
    }
    out
}

/// Gradient of `<g, conv2d_sym(x, k)>` with respect to the kernel taps.
///
/// Returns the `m*m` array `grad[a][b] = sum_{i,j} g[i,j] * pad(x)[i+c-a, j+c-b]`
/// where `pad` is the symmetric extension used by `conv2d_sym`.
pub fn conv2d_kernel_grad(g: &Image, x: &Image, m: usize) -> Vec<f64> {
    debug_assert!(g.same_size(x));
    debug_assert!(m % 2 == 1);
    let (w, h) = (x.width, x.height);
    let c = (m / 2) as isize;
    let mut grad = vec![0.0; m * m];

    for i in 0..h {
        for j in 0..w {
            let gv = g.data[i * w + j];
            for a in 0..m {
                let yy = mirror(i as isize + c - a as isize, h);
                let krow = a * m;
                for b in 0..m {
                    let xx = mirror(j as isize + c - b as isize, w);
                    grad[krow + b] += gv * x.data[yy * w + xx];
                }
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::CounterRng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = CounterRng::keyed(seed, 0);
        let data = (0..w * h).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
        Image::new(w, h, data).unwrap()
    }

    fn random_kernel(m: usize, seed: u64) -> Kernel {
        let mut rng = CounterRng::keyed(seed, 1);
        let coeffs = (0..m * m).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
        Kernel::new(m, coeffs).unwrap()
    }

    /// Dense matrix of the padded convolution operator, built directly from
    /// the definition. Test-only oracle, independent of conv2d_sym's loops.
    fn dense_operator(w: usize, h: usize, k: &Kernel) -> Vec<Vec<f64>> {
        let m = k.size();
        let c = (m / 2) as isize;
        let n = w * h;
        let mut mat = vec![vec![0.0; n]; n];
        for i in 0..h {
            for j in 0..w {
                let row = i * w + j;
                for a in 0..m {
                    for b in 0..m {
                        let yy = mirror(i as isize + c - a as isize, h);
                        let xx = mirror(j as isize + c - b as isize, w);
                        mat[row][yy * w + xx] += k.coeffs()[a * m + b];
                    }
                }
            }
        }
        mat
    }

    fn apply_dense(mat: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        mat.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    #[test]
    fn rotate180_reverses_indices() {
        let k = Kernel::new(3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]).unwrap();
        let r = rotate180(&k);
        assert_eq!(r.coeffs(), &[9.0, 8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn rotate180_fixes_center_of_1x1() {
        let k = Kernel::new(1, vec![3.5]).unwrap();
        assert_eq!(rotate180(&k).coeffs(), &[3.5]);
    }

    #[test]
    fn rotate180_is_involution() {
        for m in [1, 3, 5, 7] {
            let k = random_kernel(m, 42 + m as u64);
            assert_eq!(rotate180(&rotate180(&k)), k);
        }
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = random_image(7, 5, 9);
        for m in [1, 3, 5] {
            let d = Kernel::delta(m).unwrap();
            assert_eq!(conv2d_sym(&x, &d), x);
        }
    }

    #[test]
    fn constant_image_scales_by_coeff_sum() {
        let x = Image::constant(6, 4, 2.5).unwrap();
        let k = random_kernel(3, 5);
        let out = conv2d_sym(&x, &k);
        let expect = 2.5 * k.coeff_sum();
        for &v in out.data() {
            assert!((v - expect).abs() < 1e-12, "{v} vs {expect}");
        }
    }

    #[test]
    fn conv_matches_dense_matrix_oracle() {
        let x = random_image(5, 5, 11);
        let k = random_kernel(3, 12);
        let mat = dense_operator(5, 5, &k);
        let dense = apply_dense(&mat, x.data());
        let fast = conv2d_sym(&x, &k);
        for (a, b) in fast.data().iter().zip(&dense) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_matches_dense_transpose_oracle() {
        let x = random_image(4, 4, 21);
        let y = random_image(4, 4, 22);
        let k = random_kernel(3, 23);
        let mat = dense_operator(4, 4, &k);
        // <Kx, y> via dense, <x, K^T y> via conv2d_adjoint
        let kx = apply_dense(&mat, x.data());
        let lhs: f64 = kx.iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let kty = conv2d_adjoint(&y, &k);
        let rhs = x.dot(&kty);
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn adjoint_identity_for_all_kernel_sizes() {
        for m in [3usize, 5, 7, 9] {
            for trial in 0..20 {
                let seed = (m as u64) * 1000 + trial;
                let x = random_image(12, 10, seed);
                let y = random_image(12, 10, seed + 500);
                let k = random_kernel(m, seed + 900);
                let lhs = conv2d_sym(&x, &k).dot(&y);
                let rhs = x.dot(&conv2d_adjoint(&y, &k));
                assert!(
                    (lhs - rhs).abs() < 1e-10,
                    "m={m} trial={trial}: {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn adjoint_of_delta_is_identity() {
        let y = random_image(6, 6, 31);
        let d = Kernel::delta(3).unwrap();
        assert_eq!(conv2d_adjoint(&y, &d), y);
    }

    #[test]
    fn adjoint_equals_rotated_convolution_in_interior() {
        let y = random_image(32, 32, 41);
        let k = random_kernel(3, 42);
        let adj = conv2d_adjoint(&y, &k);
        let rot = conv2d_sym(&y, &rotate180(&k));
        // compare on the 16x16 center, away from any boundary effect
        for i in 8..24 {
            for j in 8..24 {
                assert!((adj.get(j, i) - rot.get(j, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_is_linear() {
        let x = random_image(9, 7, 51);
        let z = random_image(9, 7, 52);
        let k = random_kernel(5, 53);
        let (a, b) = (1.7, -0.3);
        let mut combo = x.clone();
        for (c, (&xv, &zv)) in combo.data_mut().iter_mut().zip(x.data().iter().zip(z.data())) {
            *c = a * xv + b * zv;
        }
        let lhs = conv2d_sym(&combo, &k);
        let cx = conv2d_sym(&x, &k);
        let cz = conv2d_sym(&z, &k);
        for (i, &v) in lhs.data().iter().enumerate() {
            let want = a * cx.data()[i] + b * cz.data()[i];
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn output_dimensions_match_input() {
        for (w, h) in [(1, 1), (2, 3), (5, 1), (17, 9)] {
            let x = random_image(w, h, (w * 100 + h) as u64);
            let k = random_kernel(5, 77);
            let out = conv2d_sym(&x, &k);
            assert_eq!((out.width(), out.height()), (w, h));
            let adj = conv2d_adjoint(&x, &k);
            assert_eq!((adj.width(), adj.height()), (w, h));
        }
    }

    #[test]
    fn kernel_grad_matches_finite_difference() {
        let g = random_image(6, 5, 61);
        let x = random_image(6, 5, 62);
        let m = 3;
        let k0 = random_kernel(m, 63);
        let grad = conv2d_kernel_grad(&g, &x, m);
        let h = 1e-6;
        for idx in 0..m * m {
            let mut cp = k0.coeffs().to_vec();
            cp[idx] += h;
            let kp = Kernel::new(m, cp).unwrap();
            let mut cm = k0.coeffs().to_vec();
            cm[idx] -= h;
            let km = Kernel::new(m, cm).unwrap();
            let fp = conv2d_sym(&x, &kp).dot(&g);
            let fm = conv2d_sym(&x, &km).dot(&g);
            let fd = (fp - fm) / (2.0 * h);
            assert!((grad[idx] - fd).abs() < 1e-6, "tap {idx}: {} vs {fd}", grad[idx]);
        }
    }

    #[test]
    fn constructors_reject_bad_input() {
        assert!(Image::new(0, 4, vec![]).is_err());
        assert!(Image::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Image::new(1, 1, vec![f64::NAN]).is_err());
        assert!(Image::new(MAX_DIM + 1, 1, vec![]).is_err());
        assert!(Kernel::new(2, vec![0.0; 4]).is_err());
        assert!(Kernel::new(3, vec![0.0; 8]).is_err());
        assert!(Kernel::new(3, vec![f64::INFINITY; 9]).is_err());
    }

    #[test]
    fn tiny_image_with_overhanging_kernel() {
        // 1x1 image under a 3x3 kernel: every tap reads the single pixel
        let x = Image::constant(1, 1, 2.0).unwrap();
        let k = random_kernel(3, 71);
        let out = conv2d_sym(&x, &k);
        assert!((out.get(0, 0) - 2.0 * k.coeff_sum()).abs() < 1e-12);
        // adjoint identity still holds exactly
        let y = Image::constant(1, 1, -0.7).unwrap();
        let lhs = conv2d_sym(&x, &k).dot(&y);
        let rhs = x.dot(&conv2d_adjoint(&y, &k));
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
