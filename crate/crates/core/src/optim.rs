//! Derivative-free local refinement: a two-variable Nelder-Mead simplex.
//!
//! Used to polish delay-Doppler objective maxima after a coarse grid stage.
//! The search tracks the best point ever evaluated and returns it, so a
//! start at the global maximum is returned unchanged (bit-exactly) — the
//! correct-specification collapse tests rely on this.

/// Options for [`maximize2`].
#[derive(Debug, Clone)]
pub struct SimplexOptions {
    /// Per-coordinate convergence tolerances on the simplex extent.
    pub x_tol: [f64; 2],
    /// Initial simplex edge per coordinate.
    pub init_step: [f64; 2],
    /// Iteration cap; exceeding it clears the `converged` flag.
    pub max_iters: usize,
}

/// Outcome of a simplex refinement.
#[derive(Debug, Clone)]
pub struct SimplexResult {
    /// Best point ever evaluated.
    pub x: [f64; 2],
    /// Objective value at `x`.
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Best objective value after each iteration.
    pub trace: Vec<f64>,
}

/// Maximizes `f` over two variables with a standard Nelder-Mead simplex
/// (reflection 1, expansion 2, contraction 0.5, shrink 0.5).
pub fn maximize2<F: FnMut(f64, f64) -> f64>(
    mut f: F,
    x0: [f64; 2],
    opts: &SimplexOptions,
) -> SimplexResult {
    let mut eval = |x: [f64; 2]| f(x[0], x[1]);

    let mut simplex = [
        x0,
        [x0[0] + opts.init_step[0], x0[1]],
        [x0[0], x0[1] + opts.init_step[1]],
    ];
    let mut values = simplex.map(&mut eval);

    let mut best = x0;
    let mut best_value = values[0];
    let record = |x: [f64; 2], v: f64, best: &mut [f64; 2], best_value: &mut f64| {
        if v > *best_value {
            *best_value = v;
            *best = x;
        }
    };
    record(simplex[1], values[1], &mut best, &mut best_value);
    record(simplex[2], values[2], &mut best, &mut best_value);

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        iterations += 1;

        // Order vertices: index 0 best, 2 worst.
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
        simplex = [simplex[order[0]], simplex[order[1]], simplex[order[2]]];
        values = [values[order[0]], values[order[1]], values[order[2]]];

        // Converged when the simplex extent is below tolerance per axis.
        let small = (0..2).all(|axis| {
            let extent = (simplex[1][axis] - simplex[0][axis])
                .abs()
                .max((simplex[2][axis] - simplex[0][axis]).abs());
            extent <= opts.x_tol[axis]
        });
        if small {
            converged = true;
            trace.push(best_value);
            break;
        }

        let centroid = [
            0.5 * (simplex[0][0] + simplex[1][0]),
            0.5 * (simplex[0][1] + simplex[1][1]),
        ];
        let reflect = [
            centroid[0] + (centroid[0] - simplex[2][0]),
            centroid[1] + (centroid[1] - simplex[2][1]),
        ];
        let f_reflect = eval(reflect);
        record(reflect, f_reflect, &mut best, &mut best_value);

        if f_reflect > values[0] {
            // Try to expand past the reflected point.
            let expand = [
                centroid[0] + 2.0 * (centroid[0] - simplex[2][0]),
                centroid[1] + 2.0 * (centroid[1] - simplex[2][1]),
            ];
            let f_expand = eval(expand);
            record(expand, f_expand, &mut best, &mut best_value);
            if f_expand > f_reflect {
                simplex[2] = expand;
                values[2] = f_expand;
            } else {
                simplex[2] = reflect;
                values[2] = f_reflect;
            }
        } else if f_reflect > values[1] {
            simplex[2] = reflect;
            values[2] = f_reflect;
        } else {
            // Contract toward the centroid, outside or inside.
            let (anchor, f_anchor) = if f_reflect > values[2] {
                (reflect, f_reflect)
            } else {
                (simplex[2], values[2])
            };
            let contract = [
                centroid[0] + 0.5 * (anchor[0] - centroid[0]),
                centroid[1] + 0.5 * (anchor[1] - centroid[1]),
            ];
            let f_contract = eval(contract);
            record(contract, f_contract, &mut best, &mut best_value);
            if f_contract > f_anchor {
                simplex[2] = contract;
                values[2] = f_contract;
            } else {
                // Shrink every non-best vertex toward the best.
                for k in 1..3 {
                    simplex[k] = [
                        simplex[0][0] + 0.5 * (simplex[k][0] - simplex[0][0]),
                        simplex[0][1] + 0.5 * (simplex[k][1] - simplex[0][1]),
                    ];
                    values[k] = eval(simplex[k]);
                    record(simplex[k], values[k], &mut best, &mut best_value);
                }
            }
        }
        trace.push(best_value);
    }

    SimplexResult {
        x: best,
        value: best_value,
        iterations,
        converged,
        trace,
    }
}
