//! `verify`: run the acceptance battery and write `verify.json`.

use serde::Serialize;

use super::Context;
use crate::battery::{Battery, CriterionResult};
use crate::error::{ExitStatus, Result};

#[derive(Debug, Serialize)]
struct VerifyReport<'a> {
    criteria: &'a [CriterionResult],
    pass: bool,
}

pub fn run(ctx: &Context) -> Result<ExitStatus> {
    let battery = Battery::new(&ctx.config, &ctx.base_dir);
    let results = battery.run_all(&ctx.config.verify.criteria);
    for r in &results {
        println!("{}", r.line());
    }
    let status = results.iter().fold(ExitStatus::Pass, |s, r| s.worst(r.status()));
    ctx.out.write_json("verify.json", &VerifyReport { criteria: &results, pass: status == ExitStatus::Pass })?;
    Ok(status)
}
