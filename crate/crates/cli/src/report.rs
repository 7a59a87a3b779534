//! Comparison table over evaluation reports: one row per model and
//! augmentation setting, columns Dice mean, Dice std, sensitivity and APD.

use lvseg::metrics::MetricsReport;

fn row_name(r: &MetricsReport) -> String {
    let variant = r.label("variant").unwrap_or("unknown");
    match r.label("augment") {
        Some("on") => format!("{variant} with augmentation"),
        Some("off") => format!("{variant} without augmentation"),
        _ => variant.to_string(),
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or("n/a".to_string(), |v| format!("{v:.2}"))
}

pub fn render(reports: &[MetricsReport]) -> String {
    let names: Vec<String> = reports.iter().map(row_name).collect();
    let width = names.iter().map(String::len).chain([5]).max().unwrap_or(5);
    let mut out = format!(
        "{:<width$}  {:>9}  {:>8}  {:>11}  {:>8}  {:>6}\n",
        "Model", "Dice mean", "Dice std", "Sensitivity", "APD (mm)", "Slices"
    );
    out.push_str(&format!("{}\n", "-".repeat(width + 2 + 9 + 2 + 8 + 2 + 11 + 2 + 8 + 2 + 6)));
    for (name, r) in names.iter().zip(reports) {
        out.push_str(&format!(
            "{:<width$}  {:>9.2}  {:>8.2}  {:>11}  {:>8}  {:>6}\n",
            name,
            r.dice_mean,
            r.dice_std,
            cell(r.sensitivity_mean),
            cell(r.apd_mean),
            r.records.len()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use lvseg::metrics::{aggregate, SliceRecord};

    fn report(variant: &str, augment: &str, dice: &[f64]) -> MetricsReport {
        let records = dice
            .iter()
            .enumerate()
            .map(|(i, &d)| SliceRecord {
                case: format!("c{i}"),
                slice: "0".into(),
                dice: d,
                sensitivity: Some(1.0),
                apd_mm: None,
                empty_pred: false,
            })
            .collect();
        aggregate(records).unwrap().with_label("variant", variant).with_label("augment", augment)
    }

    #[test]
    fn one_row_per_report() {
        let text = render(&[report("gbu", "on", &[0.9, 1.0]), report("unet", "off", &[0.5])]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("gbu with augmentation"));
        assert!(lines[2].contains("0.95"));
        assert!(lines[3].starts_with("unet without augmentation"));
        assert!(lines[3].contains("n/a"));
    }
}
