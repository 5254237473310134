//! Plain-text import: header `subject_id,feature_0,...,feature_{p-1},response`.

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::genotype::EncodedMatrix;

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Parses a dense matrix. Rows keep file order; subject ids are returned
/// alongside.
pub fn read_csv<R: Read>(reader: R) -> Result<(EncodedMatrix, Vec<String>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let fields: Vec<&str> = header.iter().collect();
    if fields.len() < 3 || fields[0] != "subject_id" || fields[fields.len() - 1] != "response" {
        return Err(Error::Format(
            "csv header must be subject_id,feature_0,...,response".into(),
        ));
    }
    let p = fields.len() - 2;
    for (j, name) in fields[1..=p].iter().enumerate() {
        if *name != format!("feature_{j}") {
            return Err(Error::Format(format!("column {} is {name}, expected feature_{j}", j + 1)));
        }
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut response = Vec::new();
    let mut ids = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let parse = |k: usize| -> Result<f64> {
            let v: f64 = rec[k].parse().map_err(|_| {
                Error::Format(format!("row {}: cannot parse {:?}", line + 1, &rec[k]))
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Format(format!("row {}: non-finite value", line + 1)))
            }
        };
        ids.push(rec[0].to_string());
        rows.push((1..=p).map(parse).collect::<Result<_>>()?);
        response.push(parse(p + 1)?);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset("csv has no data rows".into()));
    }
    let n = rows.len();
    let mut values = vec![0.0; n * p];
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            values[j * n + i] = v;
        }
    }
    Ok((
        EncodedMatrix {
            rows: n,
            cols: p,
            values,
            response,
            snp_ids: (0..p).collect(),
            truth: None,
        },
        ids,
    ))
}

/// Inverse of [`read_csv`]; subject ids are the row indices.
pub fn write_csv<W: Write>(m: &EncodedMatrix, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["subject_id".to_string()];
    header.extend((0..m.cols).map(|j| format!("feature_{j}")));
    header.push("response".into());
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..m.rows {
        let mut rec = vec![i.to_string()];
        rec.extend((0..m.cols).map(|j| format!("{:?}", m.values[j * m.rows + i])));
        rec.push(format!("{:?}", m.response[i]));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
