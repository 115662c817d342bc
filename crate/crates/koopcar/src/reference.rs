//! Reference paths: double-lane-change geometry with half-cosine blends,
//! a straight-line helper, nearest-point projection, and look-ahead
//! window extraction for the controllers.

use crate::mpc::ReferenceWindow;
use crate::plant::Pose;

/// Double-lane-change layout. Five sections along X: approach, outbound
/// blend, offset plateau, return blend, exit straight; lane changes are
/// half-cosine so the path is C1-continuous.
#[derive(Clone, Copy, Debug)]
pub struct DlcGeometry {
    pub lateral_offset: f64,
    pub sections: [f64; 5],
    /// Extra straight appended after the course so look-ahead windows
    /// never run off the end.
    pub tail: f64,
    /// Sample spacing along X [m].
    pub spacing: f64,
}

impl Default for DlcGeometry {
    fn default() -> Self {
        DlcGeometry {
            lateral_offset: 3.5,
            sections: [15.0, 30.0, 25.0, 25.0, 15.0],
            tail: 300.0,
            spacing: 0.05,
        }
    }
}

impl DlcGeometry {
    fn y_and_slope(&self, x: f64) -> (f64, f64) {
        let [s0, s1, s2, s3, _] = self.sections;
        let off = self.lateral_offset;
        let x1 = s0;
        let x2 = x1 + s1;
        let x3 = x2 + s2;
        let x4 = x3 + s3;
        use std::f64::consts::PI;
        if x < x1 {
            (0.0, 0.0)
        } else if x < x2 {
            let u = (x - x1) / s1;
            (
                off * 0.5 * (1.0 - (PI * u).cos()),
                off * 0.5 * PI / s1 * (PI * u).sin(),
            )
        } else if x < x3 {
            (off, 0.0)
        } else if x < x4 {
            let u = (x - x3) / s3;
            (
                off * 0.5 * (1.0 + (PI * u).cos()),
                -off * 0.5 * PI / s3 * (PI * u).sin(),
            )
        } else {
            (0.0, 0.0)
        }
    }
}

/// Densely sampled reference polyline with headings and cumulative
/// arclength.
#[derive(Clone, Debug)]
pub struct ReferencePath {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub thetas: Vec<f64>,
    cum_s: Vec<f64>,
}

/// Nearest-point projection result.
#[derive(Clone, Copy, Debug)]
pub struct NearestPoint {
    /// Segment index of the projection.
    pub index: usize,
    /// Arclength of the projection along the path.
    pub s: f64,
    /// Signed lateral deviation; positive left of the path.
    pub e_y: f64,
    /// Path heading at the projection.
    pub theta_r: f64,
    pub x_r: f64,
    pub y_r: f64,
}

pub fn gen_dlc_reference(geom: &DlcGeometry) -> ReferencePath {
    let total: f64 = geom.sections.iter().sum::<f64>() + geom.tail;
    let n = (total / geom.spacing).ceil() as usize + 1;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let mut thetas = Vec::with_capacity(n);
    for i in 0..n {
        let x = (i as f64 * geom.spacing).min(total);
        let (y, slope) = geom.y_and_slope(x);
        xs.push(x);
        ys.push(y);
        thetas.push(slope.atan());
    }
    ReferencePath::from_samples(xs, ys, thetas)
}

impl ReferencePath {
    pub fn from_samples(xs: Vec<f64>, ys: Vec<f64>, thetas: Vec<f64>) -> ReferencePath {
        assert!(xs.len() >= 2 && xs.len() == ys.len() && ys.len() == thetas.len());
        let mut cum_s = Vec::with_capacity(xs.len());
        cum_s.push(0.0);
        for i in 1..xs.len() {
            let ds = ((xs[i] - xs[i - 1]).powi(2) + (ys[i] - ys[i - 1]).powi(2)).sqrt();
            cum_s.push(cum_s[i - 1] + ds);
        }
        ReferencePath { xs, ys, thetas, cum_s }
    }

    pub fn straight(length: f64, spacing: f64) -> ReferencePath {
        let n = (length / spacing).ceil() as usize + 1;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 * spacing).collect();
        ReferencePath::from_samples(xs.clone(), vec![0.0; n], vec![0.0; n])
    }

    pub fn total_len(&self) -> f64 {
        *self.cum_s.last().unwrap()
    }

    /// Project (x, y) onto the polyline. `hint` narrows the search to a
    /// window around the previous projection, keeping the scan monotone
    /// along the run.
    pub fn nearest(&self, x: f64, y: f64, hint: Option<usize>) -> NearestPoint {
        let n_seg = self.xs.len() - 1;
        let (lo, hi) = match hint {
            Some(h) => (h.saturating_sub(100), (h + 800).min(n_seg)),
            None => (0, n_seg),
        };
        let mut best = (f64::INFINITY, 0usize, 0.0f64);
        for i in lo..hi {
            let (ax, ay) = (self.xs[i], self.ys[i]);
            let (bx, by) = (self.xs[i + 1], self.ys[i + 1]);
            let (dx, dy) = (bx - ax, by - ay);
            let len_sq = dx * dx + dy * dy;
            let t = if len_sq > 0.0 {
                (((x - ax) * dx + (y - ay) * dy) / len_sq).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (px, py) = (ax + t * dx, ay + t * dy);
            let d2 = (x - px).powi(2) + (y - py).powi(2);
            if d2 < best.0 {
                best = (d2, i, t);
            }
        }
        let (_, i, t) = best;
        let (ax, ay) = (self.xs[i], self.ys[i]);
        let (bx, by) = (self.xs[i + 1], self.ys[i + 1]);
        let (px, py) = (ax + t * (bx - ax), ay + t * (by - ay));
        let seg_len = ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt();
        let (tx, ty) = if seg_len > 0.0 {
            ((bx - ax) / seg_len, (by - ay) / seg_len)
        } else {
            (1.0, 0.0)
        };
        let (ex, ey_c) = (x - px, y - py);
        NearestPoint {
            index: i,
            s: self.cum_s[i] + t * seg_len,
            e_y: tx * ey_c - ty * ex,
            theta_r: self.thetas[i] + t * (self.thetas[i + 1] - self.thetas[i]),
            x_r: px,
            y_r: py,
        }
    }

    /// Pose at arclength s (linear interpolation, clamped to the ends).
    pub fn pose_at_s(&self, s: f64) -> Pose {
        let s = s.clamp(0.0, self.total_len());
        let i = match self.cum_s.binary_search_by(|v| v.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.xs.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.xs.len() - 2),
        };
        let seg = self.cum_s[i + 1] - self.cum_s[i];
        let t = if seg > 0.0 { (s - self.cum_s[i]) / seg } else { 0.0 };
        Pose {
            x: self.xs[i] + t * (self.xs[i + 1] - self.xs[i]),
            y: self.ys[i] + t * (self.ys[i + 1] - self.ys[i]),
            theta: self.thetas[i] + t * (self.thetas[i + 1] - self.thetas[i]),
        }
    }

    /// Look-ahead window: np poses spaced by the distance covered at the
    /// reference speed per control period, starting one period ahead of
    /// arclength s0. Headings are unwrapped along the window.
    pub fn window(&self, s0: f64, vx_ref: f64, ts: f64, np: usize) -> ReferenceWindow {
        let mut poses = Vec::with_capacity(np);
        let mut prev_theta: Option<f64> = None;
        for i in 1..=np {
            let mut pose = self.pose_at_s(s0 + i as f64 * vx_ref * ts);
            if let Some(pt) = prev_theta {
                let two_pi = 2.0 * std::f64::consts::PI;
                while pose.theta - pt > std::f64::consts::PI {
                    pose.theta -= two_pi;
                }
                while pose.theta - pt < -std::f64::consts::PI {
                    pose.theta += two_pi;
                }
            }
            prev_theta = Some(pose.theta);
            poses.push(pose);
        }
        ReferenceWindow { poses, vx_ref }
    }
}
