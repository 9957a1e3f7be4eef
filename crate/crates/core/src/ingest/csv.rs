use super::{EegRecording, IngestError, Result};

/// Parses comma-separated samples: one row per time step, one column per
/// channel. A first row containing any non-numeric cell is taken as the
/// channel header.
pub fn parse_csv(text: &str, sample_rate_hz: f64) -> Result<EegRecording> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
        .peekable();

    let mut labels: Option<Vec<String>> = None;
    if let Some(&(_, first)) = lines.peek() {
        if first.split(',').any(|c| c.trim().parse::<f64>().is_err()) {
            labels = Some(first.split(',').map(|c| c.trim().to_string()).collect());
            lines.next();
        }
    }

    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut expected = labels.as_ref().map(Vec::len);
    for (line, row) in lines {
        let cells: Vec<&str> = row.split(',').collect();
        let width = *expected.get_or_insert(cells.len());
        if cells.len() != width {
            return Err(IngestError::RaggedRow {
                line,
                expected: width,
                found: cells.len(),
            });
        }
        if columns.is_empty() {
            columns = vec![Vec::new(); width];
        }
        for (column, (cell, out)) in cells.iter().zip(columns.iter_mut()).enumerate() {
            let v = cell.trim().parse::<f64>().map_err(|_| IngestError::NonNumericCell {
                line,
                column: column + 1,
                cell: cell.to_string(),
            })?;
            out.push(v);
        }
    }
    if columns.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    let labels = labels.unwrap_or_else(|| (0..columns.len()).map(|c| format!("ch{c}")).collect());
    EegRecording::new("csv", sample_rate_hz, labels, columns)
}
