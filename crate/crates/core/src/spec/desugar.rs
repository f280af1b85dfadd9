//! Rewrites `mover` and `when` into plain `over`.

use super::ast::{Expr, OverExpr, Specification};
use super::dsl::{call, filter};
use super::validate::{validate_with, ValidatedSpec};

/// `f mover p` becomes `map_only_value(f over opt_to_set(p))`;
/// `f when (ps, c)` becomes `f over ps updating { p in ps | c(p) }`.
pub fn desugar_expr(e: Expr) -> Expr {
    e.rewrite(&mut |node| match node {
        Expr::MOver(m) => call(
            "map_only_value",
            [Expr::Over(OverExpr {
                stream: m.stream,
                params: Box::new(call("opt_to_set", [*m.param])),
                updating: m.updating,
                init: m.init,
            })],
        ),
        Expr::When(w) => {
            let params = *w.params;
            Expr::Over(OverExpr {
                stream: w.stream,
                params: Box::new(params.clone()),
                updating: Some(Box::new(filter(params, *w.cond))),
                init: w.init,
            })
        }
        other => other,
    })
}

/// Desugars every output and parametric body. Nested specifications are
/// desugared when they are validated.
pub fn desugar_spec(spec: &Specification) -> Specification {
    let mut out = spec.clone();
    for o in &mut out.outputs {
        o.expr = desugar_expr(o.expr.clone());
    }
    for p in &mut out.parametric {
        p.body = desugar_expr(p.body.clone());
    }
    out
}

/// The same specification with its source rewritten to use only `over`.
/// Validation already evaluates the desugared form, so the result behaves
/// identically; its source no longer contains sugar.
pub fn desugar(spec: &ValidatedSpec) -> ValidatedSpec {
    validate_with(desugar_spec(spec.source()), spec.registry().clone())
        .expect("desugaring preserves validity")
}

#[cfg(test)]
pub(crate) fn contains_sugar(e: &Expr) -> bool {
    let mut found = false;
    e.walk(&mut |n| {
        if matches!(n, Expr::MOver(_) | Expr::When(_)) {
            found = true;
        }
    });
    found
}
