//! Minimal SVG overlays of a scene and one or more paths.

use std::fmt::Write;

use memmo::geometry::{forward_kinematics, Robot};
use memmo::{Environment, Obstacle, Path};

const SIZE: f64 = 600.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

/// World window `[x0, y0, x1, y1]` shown in the picture.
fn window(env: &Environment) -> [f64; 4] {
    match env.robot() {
        Robot::Base2d { .. } => {
            let l = env.joint_limits();
            [l[0][0], l[1][0], l[0][1], l[1][1]]
        }
        Robot::Arm { base, .. } => {
            let r = 1.1 * env.reach().unwrap_or(1.0);
            [base[0] - r, base[1] - r, base[0] + r, base[1] + r]
        }
    }
}

struct Canvas {
    w: [f64; 4],
    scale: f64,
    out: String,
}

impl Canvas {
    fn x(&self, v: f64) -> f64 {
        (v - self.w[0]) * self.scale
    }

    fn y(&self, v: f64) -> f64 {
        (self.w[3] - v) * self.scale
    }

    fn polyline(&mut self, pts: &[[f64; 2]], color: &str, width: f64, opacity: f64) {
        let coords: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", self.x(p[0]), self.y(p[1]))).collect();
        let _ = writeln!(
            self.out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}" stroke-opacity="{opacity}"/>"#,
            coords.join(" ")
        );
    }

    fn circle(&mut self, c: [f64; 2], r: f64, fill: &str, opacity: f64) {
        let _ = writeln!(
            self.out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="{fill}" fill-opacity="{opacity}"/>"#,
            self.x(c[0]),
            self.y(c[1]),
            r * self.scale
        );
    }
}

/// Renders `env` with each labelled path overlaid in its own color.
pub fn render(env: &Environment, paths: &[(String, &Path)]) -> String {
    let w = window(env);
    let scale = SIZE / (w[2] - w[0]).max(w[3] - w[1]);
    let (width, height) = ((w[2] - w[0]) * scale, (w[3] - w[1]) * scale);
    let mut c = Canvas { w, scale, out: String::new() };
    let _ = writeln!(
        c.out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.2} {height:.2}">"#
    );
    let _ = writeln!(c.out, r#"<rect width="100%" height="100%" fill="white" stroke="black"/>"#);
    for o in env.obstacles() {
        match *o {
            Obstacle::Circle { center, radius } => c.circle(center, radius, "#777777", 1.0),
            Obstacle::Rect { min, max } => {
                let _ = writeln!(
                    c.out,
                    r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#777777"/>"##,
                    c.x(min[0]),
                    c.y(max[1]),
                    (max[0] - min[0]) * scale,
                    (max[1] - min[1]) * scale
                );
            }
        }
    }
    for (i, (label, path)) in paths.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(c.out, "<g><title>{}</title>", escape(label));
        match env.robot() {
            Robot::Base2d { footprint_radius } => {
                let pts: Vec<[f64; 2]> = path.configs().map(|q| [q[0], q[1]]).collect();
                for p in &pts {
                    c.circle(*p, *footprint_radius, color, 0.08);
                }
                c.polyline(&pts, color, 2.0, 1.0);
            }
            Robot::Arm { .. } => {
                let stride = (path.steps() / 6).max(1);
                let mut tips = Vec::with_capacity(path.steps() + 1);
                for (t, q) in path.configs().enumerate() {
                    let Ok(pose) = forward_kinematics(env, q) else { continue };
                    tips.push(pose.tip);
                    if t % stride == 0 || t == path.steps() {
                        let mut chain = pose.joints.clone();
                        chain.push(pose.tip);
                        c.polyline(&chain, color, 3.0, 0.35);
                    }
                }
                c.polyline(&tips, color, 1.5, 1.0);
            }
        }
        let _ = writeln!(
            c.out,
            r#"<text x="8" y="{:.0}" font-family="sans-serif" font-size="14" fill="{color}">{}</text></g>"#,
            20.0 + 18.0 * i as f64,
            escape(label)
        );
    }
    c.out.push_str("</svg>\n");
    c.out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use memmo::geometry::straight_line_path;

    #[test]
    fn base_overlay_has_obstacle_and_path() {
        let env = Environment::base2d(
            "t",
            0.1,
            vec![[-1.0, 1.0], [-1.0, 1.0], [-3.2, 3.2]],
            vec![Obstacle::Rect { min: [-0.2, -0.2], max: [0.2, 0.2] }],
        )
        .unwrap();
        let p = straight_line_path(&[-0.8, -0.8, 0.0], &[0.8, -0.8, 0.0], 4, &[]).unwrap();
        let svg = render(&env, &[("a<b".into(), &p)]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("<polyline"));
        assert!(svg.contains(r##"<rect x="240.00" y="240.00" width="120.00" height="120.00""##));
        assert!(svg.contains("a&lt;b"));
    }
}
