use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::motion::{finite_diff, MotionSequence};

/// Similarity transform `y = scale * rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.scale * self.rotation * Vector3::from(p) + self.translation;
        [v.x, v.y, v.z]
    }
}

/// Least-squares similarity mapping the points `x` onto `y` (Umeyama's
/// closed form). The rotation is proper: a reflection in the SVD solution is
/// corrected by flipping the smallest singular direction.
pub fn procrustes_align(x: &[[f64; 3]], y: &[[f64; 3]]) -> Result<Similarity> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} source points vs {} target points", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InsufficientLength { needed: 3, got: n });
    }
    let mean = |pts: &[[f64; 3]]| pts.iter().fold(Vector3::zeros(), |a, p| a + Vector3::from(*p)) / n as f64;
    let (mx, my) = (mean(x), mean(y));
    let mut cov = Matrix3::zeros();
    let mut cov_x = Matrix3::zeros();
    let mut var_x = 0.0;
    for (px, py) in x.iter().zip(y) {
        let dx = Vector3::from(*px) - mx;
        let dy = Vector3::from(*py) - my;
        cov += dy * dx.transpose();
        cov_x += dx * dx.transpose();
        var_x += dx.norm_squared();
    }
    cov /= n as f64;
    var_x /= n as f64;
    let sx = cov_x.symmetric_eigenvalues();
    let mut ev: Vec<f64> = sx.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(var_x > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::Degenerate("source points are coincident or collinear".into()));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested U"), svd.v_t.expect("requested V^T"));
    let mut s = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        // Flip the direction of the smallest singular value.
        let k = (0..3).min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b])).unwrap();
        s[(k, k)] = -1.0;
    }
    let rotation = u * s * v_t;
    let trace: f64 = (0..3).map(|i| svd.singular_values[i] * s[(i, i)]).sum();
    let scale = trace / var_x;
    let translation = my - scale * rotation * mx;
    Ok(Similarity { scale, rotation, translation })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alignment {
    None,
    Procrustes,
}

fn check_pair(pred: &MotionSequence, gt: &MotionSequence) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("prediction has {} frames, ground truth {}", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::InsufficientLength { needed: 1, got: 0 });
    }
    Ok(())
}

/// Summed per-joint error in meters and the number of joint samples.
pub(crate) fn mpjpe_sum(pred: &MotionSequence, gt: &MotionSequence, align: Alignment) -> Result<(f64, usize)> {
    check_pair(pred, gt)?;
    let mut sum = 0.0;
    let mut n = 0;
    for (p, g) in pred.frames().iter().zip(gt.frames()) {
        let tf = match align {
            Alignment::None => None,
            Alignment::Procrustes => Some(procrustes_align(p, g)?),
        };
        for (pj, gj) in p.iter().zip(g) {
            let q = tf.map_or(*pj, |t| t.apply(*pj));
            sum += ((q[0] - gj[0]).powi(2) + (q[1] - gj[1]).powi(2) + (q[2] - gj[2]).powi(2)).sqrt();
            n += 1;
        }
    }
    Ok((sum, n))
}

/// Mean per-joint position error in millimeters, optionally after aligning
/// each predicted frame to its ground truth frame.
pub fn mpjpe(pred: &MotionSequence, gt: &MotionSequence, align: Alignment) -> Result<f64> {
    let (s, n) = mpjpe_sum(pred, gt, align)?;
    Ok(1000.0 * s / n as f64)
}

pub(crate) fn diff_error_sum(pred: &MotionSequence, gt: &MotionSequence, order: usize) -> Result<(f64, usize)> {
    let (a, b) = (finite_diff(pred, order)?, finite_diff(gt, order)?);
    let mut sum = 0.0;
    let mut n = 0;
    for (fa, fb) in a.iter().zip(&b) {
        for (ja, jb) in fa.iter().zip(fb) {
            sum += ((ja[0] - jb[0]).powi(2) + (ja[1] - jb[1]).powi(2) + (ja[2] - jb[2]).powi(2)).sqrt();
            n += 1;
        }
    }
    Ok((sum, n))
}

/// Mean velocity error (mm/s) and acceleration error (mm/s²) between
/// finite-difference derivatives. Needs at least three frames.
pub fn vel_accel_error(pred: &MotionSequence, gt: &MotionSequence) -> Result<(f64, f64)> {
    check_pair(pred, gt)?;
    if pred.len() < 3 {
        return Err(Error::InsufficientLength { needed: 3, got: pred.len() });
    }
    if pred.fps() != gt.fps() {
        return Err(Error::InvalidArgument(format!("frame rates differ: {} vs {}", pred.fps(), gt.fps())));
    }
    let (sv, nv) = diff_error_sum(pred, gt, 1)?;
    let (sa, na) = diff_error_sum(pred, gt, 2)?;
    Ok((1000.0 * sv / nv as f64, 1000.0 * sa / na as f64))
}
