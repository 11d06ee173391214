//! Run output files. Everything is derived from sorted maps or event order, so
//! two runs with the same seed produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::engine::RunOutput;
use crate::network::BlockOutcome;
use crate::world_model::write_store;

pub fn ledger_document(out: &RunOutput) -> String {
    let mut doc = out.ledger.to_flat_document();
    let _ = writeln!(doc, "run.events_processed = {}", out.events_processed);
    match &out.violation {
        None => doc.push_str("run.violation = none\n"),
        Some(v) => {
            let _ = writeln!(doc, "run.violation = {}", v.name());
            let _ = writeln!(doc, "run.violation_detail = {v}");
        }
    }
    doc
}

pub fn decisions_csv(out: &RunOutput) -> String {
    let mut s = String::from("time_us,task,app,placement,pinned,costs\n");
    for d in &out.decisions {
        let _ = writeln!(s, "{},{},{},{},{},{}", d.time, d.task.0, d.app.0, d.placement, d.pinned, d.costs);
    }
    s
}

pub fn blocks_csv(out: &RunOutput) -> String {
    let mut s = String::from(
        "time_us,flow,mode,k,fec_redundancy,data_packets,parity_packets,retransmitted,losses,nack_rounds,bytes_sent,delivered,completed_us\n",
    );
    for b in &out.blocks {
        let r = &b.report;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            b.time,
            b.flow,
            b.plan.mode.as_str(),
            b.plan.k,
            b.plan.fec_redundancy,
            r.data_packets,
            r.parity_packets,
            r.retransmitted_packets,
            r.losses,
            r.nack_rounds,
            r.bytes_sent,
            matches!(r.outcome, BlockOutcome::Delivered(_)),
            r.completed_at.map(|t| t.to_string()).unwrap_or_default(),
        );
    }
    s
}

pub fn audit_csv(out: &RunOutput) -> String {
    let mut s = String::from("time_us,stage,action,item\n");
    for a in &out.audit {
        let _ = writeln!(s, "{},{},{},{}", a.time, a.stage, a.record.action.as_str(), a.record.item);
    }
    s
}

pub fn render_csv(out: &RunOutput) -> String {
    let mut s = String::from("frame,time_us,placement,app,priority,relevance\n");
    for r in &out.render {
        let i = &r.item;
        let _ = writeln!(s, "{},{},{},{},{:?},{:.6}", r.frame, r.time, i.placement.0, i.app.0, i.priority, i.relevance);
    }
    s
}

/// Writes every output file into `dir` and returns the paths written.
pub fn write_outputs(dir: &Path, out: &RunOutput, with_render: bool) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files: Vec<(String, String)> = vec![
        ("ledger.txt".into(), ledger_document(out)),
        ("decisions.csv".into(), decisions_csv(out)),
        ("blocks.csv".into(), blocks_csv(out)),
        ("privacy_audit.csv".into(), audit_csv(out)),
    ];
    for name in out.ledger.series_names() {
        files.push((format!("series_{name}.csv"), out.ledger.series_csv(name)));
    }
    if with_render {
        files.push(("render_list.csv".into(), render_csv(out)));
    }
    let store = write_store(&out.world).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    files.push(("world.xroswm".into(), store));

    let mut written = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run, RunOptions};
    use crate::scenario::{tests::MINIMAL, Scenario};

    #[test]
    fn files_are_byte_identical_across_runs() {
        let s = Scenario::parse(MINIMAL, &[]).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let fa = write_outputs(a.path(), &run(&s, &[], RunOptions { record_render: true, ..RunOptions::default() }), true).unwrap();
        let fb = write_outputs(b.path(), &run(&s, &[], RunOptions { record_render: true, ..RunOptions::default() }), true).unwrap();
        assert_eq!(fa.len(), fb.len());
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(x.file_name(), y.file_name());
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{:?}", x.file_name());
        }
        let ledger = fs::read_to_string(a.path().join("ledger.txt")).unwrap();
        assert!(ledger.contains("counter.frames_rendered = 60"));
        assert!(ledger.ends_with("run.violation = none\n"));
    }
}
