/// A small text table, printed aligned or as CSV.
pub struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Self {
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.headers.len());
        self.rows.push(cells);
    }

    pub fn render(&self, csv: bool) -> String {
        let lines = std::iter::once(&self.headers).chain(&self.rows);
        if csv {
            return lines.map(|r| r.join(",") + "\n").collect();
        }
        let widths: Vec<usize> = (0..self.headers.len())
            .map(|c| lines.clone().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        lines
            .map(|r| {
                let cells: Vec<String> = r
                    .iter()
                    .zip(&widths)
                    .enumerate()
                    .map(|(c, (cell, &w))| if c == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                    .collect();
                cells.join("  ").trim_end().to_string() + "\n"
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_both_ways() {
        let mut t = Table::new(&["scan", "points"]);
        t.row(vec!["P1-partial".into(), "812".into()]);
        assert_eq!(t.render(true), "scan,points\nP1-partial,812\n");
        assert_eq!(t.render(false), "scan        points\nP1-partial     812\n");
    }
}
