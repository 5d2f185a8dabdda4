use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{Dataset, Document, Provenance};
use crate::error::{Error, Result};

/// Reads `id<TAB>text<TAB>label,label,...` lines.
pub fn load_tsv(path: &Path, provenance: Provenance) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(BufReader::new(file), path, provenance)
}

pub fn parse_tsv<R: BufRead>(reader: R, path: &Path, provenance: Provenance) -> Result<Dataset> {
    let mut docs = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 3 tab-separated columns, found {}", cols.len()),
            ));
        }
        let (id, text, labels) = (cols[0], cols[1], cols[2]);
        if id.is_empty() {
            return Err(Error::parse(path, lineno, "empty document id"));
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::Validation(format!(
                "{}:{lineno}: duplicate document id `{id}`",
                path.display()
            )));
        }
        if text.trim().is_empty() {
            return Err(Error::Validation(format!(
                "{}:{lineno}: document `{id}` has empty text",
                path.display()
            )));
        }
        let mut set = BTreeSet::new();
        for label in labels.split(',') {
            if label.is_empty() {
                return Err(Error::Validation(format!(
                    "{}:{lineno}: document `{id}` has an empty label field",
                    path.display()
                )));
            }
            set.insert(label.to_string());
        }
        docs.push(Document {
            id: id.to_string(),
            text: text.to_string(),
            labels: set,
            has_fulltext: provenance == Provenance::Fulltext,
        });
    }
    Dataset::new(docs, provenance)
}

pub fn write_tsv<W: Write>(out: &mut W, data: &Dataset) -> Result<()> {
    for doc in data.documents() {
        if doc.text.contains(['\t', '\n']) {
            return Err(Error::Validation(format!(
                "document `{}` text contains a tab or newline",
                doc.id
            )));
        }
        if doc.labels.iter().any(|l| l.contains([',', '\t', '\n'])) {
            return Err(Error::Validation(format!(
                "document `{}` has a label containing a separator",
                doc.id
            )));
        }
        let labels: Vec<&str> = doc.labels.iter().map(String::as_str).collect();
        writeln!(out, "{}\t{}\t{}", doc.id, doc.text, labels.join(","))
            .map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Dataset> {
        parse_tsv(s.as_bytes(), Path::new("mem.tsv"), Provenance::Title)
    }

    #[test]
    fn parses_fields() {
        let d = parse("d1\tcredit risk models\trisk,banking\n").unwrap();
        let doc = &d.documents()[0];
        assert_eq!(doc.id, "d1");
        assert_eq!(doc.text, "credit risk models");
        assert_eq!(
            doc.labels,
            ["banking".to_string(), "risk".to_string()].into_iter().collect()
        );
    }

    #[test]
    fn preserves_order() {
        let d = parse("c\tx\ta\na\ty\tb\nb\tz\tc\n").unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.ids().collect::<Vec<_>>(), vec!["c", "a", "b"]);
    }

    #[test]
    fn duplicate_id_is_named() {
        let err = parse("d1\tx\ta\nd1\ty\tb\n").unwrap_err().to_string();
        assert!(err.contains("d1"), "{err}");
    }

    #[test]
    fn wrong_column_count_reports_line() {
        match parse("d1\tx\ta\nd2\tonly two\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_label_field_is_validation_error() {
        assert!(matches!(parse("d1\tx\t\n"), Err(Error::Validation(_))));
        assert!(matches!(parse("d1\tx\ta,,b\n"), Err(Error::Validation(_))));
    }

    #[test]
    fn write_round_trips() {
        let d = parse("d1\tβ-blockers 2017\tmed,pharma\nd2\tplain\tx\n").unwrap();
        let mut buf = Vec::new();
        write_tsv(&mut buf, &d).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "d1\tβ-blockers 2017\tmed,pharma\nd2\tplain\tx\n"
        );
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap(), d);
    }
}
