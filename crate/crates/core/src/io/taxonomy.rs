//! Static design tables: which framework components carry over to each
//! variant, and how far each variant can be evaluated on replayed data.

use std::fmt::Write;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mark {
    Applies,
    Modified,
    NotApplicable,
}

impl Mark {
    pub fn symbol(self) -> &'static str {
        match self {
            Mark::Applies => "✓",
            Mark::Modified => "~",
            Mark::NotApplicable => "×",
        }
    }
}

/// A mark with an optional footnote marker (`*`, `†`, `‡`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TableCell {
    pub mark: Mark,
    pub note: Option<char>,
}

impl std::fmt::Display for TableCell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.mark.symbol())?;
        if let Some(n) = self.note {
            write!(f, "{n}")?;
        }
        Ok(())
    }
}

const fn c(mark: Mark) -> TableCell {
    TableCell { mark, note: None }
}

const fn n(mark: Mark, note: char) -> TableCell {
    TableCell {
        mark,
        note: Some(note),
    }
}

use Mark::{Applies as Y, Modified as M, NotApplicable as X};

pub const VARIANT_COLUMNS: [&str; 7] = ["B", "C", "D", "E", "F", "G", "H"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InheritanceRow {
    pub component: &'static str,
    pub cells: [TableCell; 7],
}

const INHERITANCE: [InheritanceRow; 12] = [
    InheritanceRow {
        component: "Bounded-event process model",
        cells: [n(Y, '*'), n(Y, '*'), n(Y, '*'), c(M), c(X), c(M), c(X)],
    },
    InheritanceRow {
        component: "Terminal collapse property",
        cells: [c(Y), c(Y), c(Y), c(X), c(X), c(M), c(X)],
    },
    InheritanceRow {
        component: "Asymmetric depth (boundary > mid)",
        cells: [c(Y), c(Y), c(M), c(X), c(X), n(Y, '†'), c(X)],
    },
    InheritanceRow {
        component: "Oracle-mediated resolution",
        cells: [n(Y, '‡'), c(Y), c(Y), c(M), c(X), n(Y, '†'), c(X)],
    },
    InheritanceRow {
        component: "Near-mid sparsity condition",
        cells: [c(Y), c(Y), c(Y), c(X), c(X), n(Y, '†'), c(X)],
    },
    InheritanceRow {
        component: "Collateral insufficiency result",
        cells: [c(Y), c(Y), c(Y), c(X), c(X), n(Y, '†'), c(X)],
    },
    InheritanceRow {
        component: "Funding instability result",
        cells: [c(Y), c(Y), c(M), c(X), c(X), n(Y, '†'), c(M)],
    },
    InheritanceRow {
        component: "Index estimator",
        cells: [c(M), c(M), c(M), c(M), c(M), c(M), c(M)],
    },
    InheritanceRow {
        component: "Jump-aware tiered margin",
        cells: [c(Y), c(Y), c(Y), c(X), c(X), n(Y, '†'), c(X)],
    },
    InheritanceRow {
        component: "Leverage compression L_max(t)",
        cells: [c(Y), c(Y), c(Y), c(X), c(X), n(Y, '†'), c(M)],
    },
    InheritanceRow {
        component: "Resolution-zone protocol",
        cells: [c(Y), c(M), c(M), c(X), c(X), n(Y, '†'), c(X)],
    },
    InheritanceRow {
        component: "Eligibility framework",
        cells: [c(Y), c(Y), c(Y), c(M), c(M), c(Y), c(Y)],
    },
];

const INHERITANCE_NOTES: [&str; 3] = [
    "* applies per leg",
    "† applies per constituent contract within the rolling structure",
    "‡ with the addition of oracle composition rules",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvaluabilityRow {
    pub variant: &'static str,
    /// Marker attached to the variant label (`#` for research-only variants).
    pub label_note: Option<char>,
    /// Underlying, settlement, liquidity and counterfactual-replay validity.
    pub criteria: [TableCell; 4],
    pub net: &'static str,
    pub tier: &'static str,
}

const EVALUABILITY: [EvaluabilityRow; 8] = [
    EvaluabilityRow {
        variant: "A. Probability-index (base contract)",
        label_note: None,
        criteria: [c(Y), c(Y), c(Y), c(Y)],
        net: "Fully evaluable",
        tier: "Deployed",
    },
    EvaluabilityRow {
        variant: "B. Conditional probability",
        label_note: None,
        criteria: [c(M), c(Y), c(M), c(Y)],
        net: "Partially evaluable",
        tier: "Near-term",
    },
    EvaluabilityRow {
        variant: "C. Event spread",
        label_note: None,
        criteria: [c(Y), c(Y), c(M), c(Y)],
        net: "Mostly evaluable",
        tier: "Near-term",
    },
    EvaluabilityRow {
        variant: "D. Event basket",
        label_note: None,
        criteria: [n(Y, '‡'), c(Y), c(M), c(Y)],
        net: "Conditionally evaluable",
        tier: "Near-term",
    },
    EvaluabilityRow {
        variant: "E. Volatility / entropy",
        label_note: None,
        criteria: [c(Y), n(M, '*'), c(X), c(M)],
        net: "Partially evaluable",
        tier: "Research",
    },
    EvaluabilityRow {
        variant: "F. Liquidity index",
        label_note: Some('#'),
        criteria: [c(Y), c(X), c(X), c(X)],
        net: "Not evaluable",
        tier: "Research / speculative",
    },
    EvaluabilityRow {
        variant: "G. Rolling event",
        label_note: None,
        criteria: [n(Y, '†'), c(M), c(M), c(Y)],
        net: "Multi-week required",
        tier: "Near-term, data-dependent",
    },
    EvaluabilityRow {
        variant: "H. Funding-only",
        label_note: Some('#'),
        criteria: [c(M), c(X), c(X), c(X)],
        net: "Not evaluable",
        tier: "Research / speculative",
    },
];

const EVALUABILITY_NOTES: [&str; 4] = [
    "* settlement observability is trivial for the entropy variant (deterministic) but absent for the variance variant",
    "† per-constituent observability holds; rolling-structure observability requires multi-event-cycle data",
    "‡ conditional on a fixed basket-membership specification (weights, rebalancing rule, leg-resolution-ordering convention); arbitrary-basket evaluation is not supported",
    "# research / speculative variants whose deployment would change underlying market dynamics, making counterfactual replay structurally invalid",
];

pub fn inheritance_rows() -> &'static [InheritanceRow] {
    &INHERITANCE
}

pub fn evaluability_rows() -> &'static [EvaluabilityRow] {
    &EVALUABILITY
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaxonomyTable {
    Inheritance,
    Evaluability,
}

fn row(out: &mut String, cells: &[String]) {
    out.push('|');
    for c in cells {
        let _ = write!(out, " {c} |");
    }
    out.push('\n');
}

/// Renders a table as Markdown, followed by the mark legend and footnotes.
pub fn print_taxonomy(table: TaxonomyTable) -> String {
    let mut out = String::new();
    let legend = match table {
        TaxonomyTable::Inheritance => {
            let mut head = vec!["Framework component".to_string()];
            head.extend(VARIANT_COLUMNS.iter().map(|s| s.to_string()));
            row(&mut out, &head);
            row(&mut out, &vec!["---".to_string(); head.len()]);
            for r in &INHERITANCE {
                let mut cells = vec![r.component.to_string()];
                cells.extend(r.cells.iter().map(ToString::to_string));
                row(&mut out, &cells);
            }
            (
                "✓ applies directly; ~ applies with modification; × does not apply",
                &INHERITANCE_NOTES[..],
            )
        }
        TaxonomyTable::Evaluability => {
            let head: Vec<String> = [
                "Variant",
                "Underlying",
                "Settlement",
                "Liquidity",
                "Counterfactual",
                "Net evaluability",
                "Viability tier",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect();
            row(&mut out, &head);
            row(&mut out, &vec!["---".to_string(); head.len()]);
            for r in &EVALUABILITY {
                let label = match r.label_note {
                    Some(m) => format!("{} {m}", r.variant),
                    None => r.variant.to_string(),
                };
                let mut cells = vec![label];
                cells.extend(r.criteria.iter().map(ToString::to_string));
                cells.push(r.net.to_string());
                cells.push(r.tier.to_string());
                row(&mut out, &cells);
            }
            (
                "✓ criterion met; ~ partially met; × not met",
                &EVALUABILITY_NOTES[..],
            )
        }
    };
    out.push('\n');
    out.push_str(legend.0);
    out.push('\n');
    for note in legend.1 {
        out.push_str(note);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spot_cells() {
        let terminal = INHERITANCE
            .iter()
            .find(|r| r.component == "Terminal collapse property")
            .unwrap();
        assert_eq!(terminal.cells[3].to_string(), "×");
        let oracle = INHERITANCE
            .iter()
            .find(|r| r.component == "Oracle-mediated resolution")
            .unwrap();
        assert_eq!(oracle.cells[0].to_string(), "✓‡");
        let spread = EVALUABILITY.iter().find(|r| r.variant.starts_with("C.")).unwrap();
        assert_eq!((spread.net, spread.tier), ("Mostly evaluable", "Near-term"));
    }
}
