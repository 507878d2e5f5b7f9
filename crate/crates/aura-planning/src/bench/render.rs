//! Top-down SVG views of a workspace and its trajectories.
//!
//! Everything is projected onto position dimensions 0 and 1; workspaces
//! with fewer than two position dimensions cannot be drawn. The viewport is
//! fixed by the scene bounds, so traces that wander outside are clipped
//! rather than rescaling the picture.

use crate::error::{PlanningError, Result};
use crate::trajectory::Trajectory;
use crate::world::{Environment, GoalRegion, Obstacle};

pub struct RenderScene<'a> {
    pub env: &'a Environment,
    /// Workspace x interval, usually the model's position bounds.
    pub x_bounds: [f64; 2],
    pub y_bounds: [f64; 2],
    pub goal: Option<&'a GoalRegion>,
    pub nominal: Option<&'a Trajectory>,
    pub executed: Option<&'a Trajectory>,
    pub best: Option<&'a Trajectory>,
}

const WIDTH_PX: f64 = 720.0;

/// Render the scene as a standalone SVG 1.1 document.
pub fn render_svg(scene: &RenderScene) -> Result<String> {
    if scene.env.pos_dims() < 2 {
        return Err(PlanningError::Render(format!(
            "rendering projects onto position dimensions 0 and 1, the workspace has {}",
            scene.env.pos_dims()
        )));
    }
    let [x0, x1] = scene.x_bounds;
    let [y0, y1] = scene.y_bounds;
    if !(x1 > x0) || !(y1 > y0) || [x0, x1, y0, y1].iter().any(|v| !v.is_finite()) {
        return Err(PlanningError::Render(format!(
            "bounds must be finite non-empty intervals, got x [{x0}, {x1}] y [{y0}, {y1}]"
        )));
    }
    for (name, traj) in [
        ("nominal", scene.nominal),
        ("executed", scene.executed),
        ("best", scene.best),
    ] {
        if let Some(t) = traj {
            if t.states().iter().any(|s| !s.is_finite()) {
                return Err(PlanningError::Render(format!(
                    "{name} trajectory contains non-finite coordinates"
                )));
            }
        }
    }

    // svg's y axis points down; reflect about the workspace midline
    let flip = move |y: f64| y0 + y1 - y;
    let pad = 0.05 * (x1 - x0).max(y1 - y0);
    let (vx, vy) = (x0 - pad, y0 - pad);
    let (vw, vh) = (x1 - x0 + 2.0 * pad, y1 - y0 + 2.0 * pad);
    let sw = 0.006 * vw.max(vh);
    let height_px = (WIDTH_PX * vh / vw).round();

    let mut svg = String::new();
    svg.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH_PX}\" \
         height=\"{height_px}\" viewBox=\"{} {} {} {}\">\n",
        px(vx),
        px(vy),
        px(vw),
        px(vh)
    ));
    svg.push_str(&format!(
        "  <rect class=\"workspace\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" \
         fill=\"#fcfcfc\" stroke=\"#c8c8c8\" stroke-width=\"{}\"/>\n",
        px(x0),
        px(y0),
        px(x1 - x0),
        px(y1 - y0),
        px(sw)
    ));

    let margin = scene.env.margin();
    for ob in scene.env.obstacles() {
        // dashed inflated boundary first so the solid shape covers its middle
        if margin > 0.0 {
            svg.push_str(&obstacle_shape(ob, margin, flip, "inflated", "none", "#999999", sw, true));
        }
        svg.push_str(&obstacle_shape(ob, 0.0, flip, "obstacle", "#404040", "none", sw, false));
    }

    if let Some(goal) = scene.goal {
        let c = goal.center.values();
        svg.push_str(&format!(
            "  <circle class=\"goal\" cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"#2a9d5c\" \
             fill-opacity=\"0.15\" stroke=\"#2a9d5c\" stroke-width=\"{}\"/>\n",
            px(c[0]),
            px(flip(c[1])),
            px(goal.radius),
            px(sw)
        ));
    }

    for (class, color, traj) in [
        ("nominal", "#8a8a8a", scene.nominal),
        ("best", "#3366cc", scene.best),
        ("executed", "#cc3333", scene.executed),
    ] {
        let Some(t) = traj else { continue };
        if t.states().len() < 2 {
            continue;
        }
        let points: Vec<String> = t
            .states()
            .iter()
            .map(|s| format!("{},{}", px(s.values()[0]), px(flip(s.values()[1]))))
            .collect();
        svg.push_str(&format!(
            "  <polyline class=\"{class}\" points=\"{}\" fill=\"none\" stroke=\"{color}\" \
             stroke-width=\"{}\"/>\n",
            points.join(" "),
            px(1.4 * sw)
        ));
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

#[allow(clippy::too_many_arguments)]
fn obstacle_shape(
    ob: &Obstacle,
    grow: f64,
    flip: impl Fn(f64) -> f64,
    class: &str,
    fill: &str,
    stroke: &str,
    sw: f64,
    dashed: bool,
) -> String {
    let dash = if dashed {
        format!(" stroke-dasharray=\"{} {}\"", px(3.0 * sw), px(2.0 * sw))
    } else {
        String::new()
    };
    let paint = if stroke == "none" {
        format!("fill=\"{fill}\"")
    } else {
        format!("fill=\"{fill}\" stroke=\"{stroke}\" stroke-width=\"{}\"{dash}", px(sw))
    };
    match ob {
        Obstacle::Box { min, max } => {
            let (x_lo, x_hi) = (min[0] - grow, max[0] + grow);
            let (y_lo, y_hi) = (min[1] - grow, max[1] + grow);
            format!(
                "  <rect class=\"{class}\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" {paint}/>\n",
                px(x_lo),
                px(flip(y_hi)),
                px(x_hi - x_lo),
                px(y_hi - y_lo)
            )
        }
        Obstacle::Sphere { center, radius } => format!(
            "  <circle class=\"{class}\" cx=\"{}\" cy=\"{}\" r=\"{}\" {paint}/>\n",
            px(center[0]),
            px(flip(center[1])),
            px(radius + grow)
        ),
    }
}

/// Fixed four-decimal coordinates: plenty for a picture, and identical
/// output for identical scenes.
fn px(v: f64) -> String {
    format!("{v:.4}")
}
