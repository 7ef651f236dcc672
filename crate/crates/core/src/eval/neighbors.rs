use crate::error::Result;
use crate::model::Model;
use crate::qstate::inner_unchecked;

/// The `top_k` tokens of highest fidelity with `query`, excluding the query
/// itself. Descending by fidelity, ties broken by ascending id.
pub fn nearest_neighbors(model: &Model, query: u32, top_k: usize) -> Result<Vec<(u32, f64)>> {
    let q = model.embed(query)?;
    if top_k == 0 {
        return Ok(Vec::new());
    }
    let states = model.embed_all();
    let mut scored: Vec<(u32, f64)> = states
        .iter()
        .enumerate()
        .filter(|&(id, _)| id as u32 != query)
        .map(|(id, s)| {
            (
                id as u32,
                inner_unchecked(q.amplitudes(), s.amplitudes()).norm_sqr(),
            )
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(top_k);
    Ok(scored)
}
