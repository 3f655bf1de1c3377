//! CSV ingestion. Header: `Time,ID,<type attribute names…>,Value`; type cells
//! hold a label from the schema or a numeric code.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;

use crate::error::{IngestError, ServerError};
use crate::prefix_tree::Epoch;
use crate::schema::Schema;
use crate::server::Server;
use crate::store::Row;

/// Rows grouped by time, ascending.
pub type Epochs = BTreeMap<Epoch, Vec<Row>>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IngestSummary {
    /// Epochs published, including empty ones filling gaps.
    pub epochs: usize,
    pub rows: usize,
}

pub fn expected_header(schema: &Schema) -> Vec<String> {
    let mut h = vec!["Time".to_string(), "ID".to_string()];
    h.extend(schema.types.iter().map(|t| t.name.clone()));
    h.push("Value".into());
    h
}

pub fn parse_csv<R: Read>(reader: R, schema: &Schema) -> Result<Epochs, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let expected = expected_header(schema);
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    // an empty file has an empty header row
    if found.is_empty() || found.iter().all(String::is_empty) {
        return Ok(Epochs::new());
    }
    if found.len() != expected.len() || found.iter().zip(&expected).any(|(f, e)| !f.eq_ignore_ascii_case(e)) {
        return Err(IngestError::Header { found, expected });
    }
    let k = schema.type_count();
    let mut seen = HashSet::new();
    let mut epochs = Epochs::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |msg: String| IngestError::Row { line, msg };
        let time: Epoch = rec[0].parse().map_err(|_| bad(format!("time {:?} is not an epoch number", &rec[0])))?;
        let user = rec[1].to_string();
        if user.is_empty() {
            return Err(bad("empty ID".into()));
        }
        let types = (0..k)
            .map(|a| schema.code(a, &rec[2 + a]).map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let value: u64 = rec[2 + k].parse().map_err(|_| bad(format!("value {:?} is not a non-negative integer", &rec[2 + k])))?;
        if !seen.insert((user.clone(), time)) {
            return Err(IngestError::Duplicate { user, time, line });
        }
        epochs.entry(time).or_default().push(Row { time, user_id: user, types, value });
    }
    Ok(epochs)
}

/// Inserts every parsed epoch after the server's current one, publishing
/// empty epochs for any gap.
pub fn ingest_into(server: &mut Server, mut epochs: Epochs) -> Result<IngestSummary, ServerError> {
    let mut summary = IngestSummary::default();
    let Some(&last) = epochs.keys().next_back() else { return Ok(summary) };
    let first = *epochs.keys().next().unwrap();
    if first <= server.current_epoch() {
        return Err(ServerError::EpochOutOfOrder { expected: server.current_epoch() + 1, got: first });
    }
    for t in server.current_epoch() + 1..=last {
        let rows = epochs.remove(&t).unwrap_or_default();
        summary.rows += rows.len();
        server.insert_epoch(t, rows)?;
        summary.epochs += 1;
    }
    Ok(summary)
}

/// Splits off the rows that initialize a fresh server (time 0).
pub fn take_initial(epochs: &mut Epochs) -> Vec<Row> {
    epochs.remove(&0).unwrap_or_default()
}

/// Builds a server from scratch: time-0 rows initialize it, later times are
/// inserted in order. `make` receives the initial rows.
pub fn ingest_new<F>(mut epochs: Epochs, make: F) -> Result<(Server, IngestSummary), ServerError>
where
    F: FnOnce(Vec<Row>) -> Result<Server, ServerError>,
{
    let initial = take_initial(&mut epochs);
    let mut summary = IngestSummary { epochs: usize::from(!initial.is_empty()), rows: initial.len() };
    let mut server = make(initial)?;
    let rest = ingest_into(&mut server, epochs)?;
    summary.epochs += rest.epochs;
    summary.rows += rest.rows;
    Ok((server, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bulletin::{Bulletin, MemoryBulletin};
    use crate::sample;
    use crate::server::SecretKey;
    use std::sync::Arc;

    pub const SAMPLE_CSV: &str = "Time,ID,Type,Value
0,Alice,residential,11
0,Bob,residential,24
0,Carol,residential,13
1,Alice,residential,19
1,Bob,residential,26
1,Carol,residential,27
1,Dave,residential,26
1,Erin,industrial,36
";

    fn fresh(csv: &str) -> Result<(Server, IngestSummary), IngestError> {
        let epochs = parse_csv(csv.as_bytes(), &sample::schema())?;
        Ok(ingest_new(epochs, |init| {
            Server::initialize(sample::schema(), SecretKey::from_bytes(sample::KEY), Arc::new(MemoryBulletin::new()), init)
        })?)
    }

    #[test]
    fn sample_csv_matches_fixture() {
        let (s, summary) = fresh(SAMPLE_CSV).unwrap();
        assert_eq!(summary, IngestSummary { epochs: 2, rows: 8 });
        assert_eq!(s.bucket_count(), 3);
        assert_eq!(s.digest(1).unwrap(), sample::server().digest(1).unwrap());
    }

    #[test]
    fn empty_input_publishes_only_genesis() {
        for csv in ["", "Time,ID,Type,Value\n"] {
            let (s, summary) = fresh(csv).unwrap();
            assert_eq!(summary, IngestSummary::default());
            assert_eq!(s.bulletin().entries().len(), 1);
            assert_eq!(s.current_epoch(), 0);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let dup = "Time,ID,Type,Value\n0,Alice,residential,1\n0,Alice,industrial,2\n";
        assert!(matches!(fresh(dup), Err(IngestError::Duplicate { time: 0, line: 3, .. })));
        assert!(matches!(fresh("Time,ID,Region,Value\n"), Err(IngestError::Header { .. })));
        assert!(matches!(fresh("Time,ID,Type\n"), Err(IngestError::Header { .. })));
        assert!(matches!(fresh("Time,ID,Type,Value\n0,Al,commercial,1\n"), Err(IngestError::Row { line: 2, .. })));
        assert!(matches!(fresh("Time,ID,Type,Value\n0,Al,residential,-1\n"), Err(IngestError::Row { line: 2, .. })));
        assert!(matches!(fresh("Time,ID,Type,Value\nx,Al,residential,1\n"), Err(IngestError::Row { .. })));
        assert!(matches!(
            fresh("Time,ID,Type,Value\n0,Al,residential,4294967296\n"),
            Err(IngestError::Server(ServerError::ValueOutOfRange(_)))
        ));
    }

    #[test]
    fn numeric_codes_and_gaps() {
        let csv = "time,id,type,value\n2,Alice,1,5\n0,Bob,0,3\n";
        let (s, summary) = fresh(csv).unwrap();
        assert_eq!(summary, IngestSummary { epochs: 3, rows: 2 });
        assert_eq!(s.current_epoch(), 2);
        assert_eq!(s.bulletin().entries().len(), 3);
        assert_eq!(s.bucket(2, &[1]).unwrap().len(), 1);
    }

    #[test]
    fn later_batches_append() {
        let mut s = sample::server();
        let more = parse_csv("Time,ID,Type,Value\n2,Alice,residential,20\n".as_bytes(), s.schema()).unwrap();
        assert_eq!(ingest_into(&mut s, more).unwrap(), IngestSummary { epochs: 1, rows: 1 });
        let stale = parse_csv("Time,ID,Type,Value\n1,Zed,residential,20\n".as_bytes(), s.schema()).unwrap();
        assert!(matches!(ingest_into(&mut s, stale), Err(ServerError::EpochOutOfOrder { expected: 3, got: 1 })));
    }
}
