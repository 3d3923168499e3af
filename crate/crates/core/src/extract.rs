//! Greedy bottom-up extraction under a cost model.

use thiserror::Error;

use crate::cost::{CostModel, CostScalar, NodeCost};
use crate::egraph::{EGraph, ENode, Id, Reach};
use crate::ir::{Expr, SizeExpr, Sort};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("class {0} has no finite-cost member")]
    Unextractable(Id),
}

/// Cheapest member of every class, computed by relaxing node costs to a
/// fixpoint from an all-infinite start. Members more open than their class
/// (see [`Reach`]) are skipped, so a closed class always yields a closed
/// term.
pub struct Extractor<'g, S> {
    graph: &'g EGraph,
    best: Vec<Option<(S, ENode)>>,
}

impl<'g, S: CostScalar> Extractor<'g, S> {
    pub fn new(graph: &'g EGraph, model: &CostModel) -> Self {
        let reach = Reach::new(graph);
        let mut entries: Vec<(Id, &ENode, NodeCost<S>)> = Vec::new();
        for c in graph.classes() {
            for n in c.nodes.iter().filter(|n| reach.primary(graph, c.id, n)) {
                let sorts: Vec<Sort> = n.children.iter().map(|k| graph.data(*k).sort.clone()).collect();
                let sizes: Vec<Option<SizeExpr>> = n.children.iter().map(|k| graph.data(*k).size.clone()).collect();
                if let Ok(nc) = model.node_cost::<S>(&n.op, &sorts, &sizes) {
                    entries.push((c.id, n, nc));
                }
            }
        }
        let mut best: Vec<Option<(S, ENode)>> = vec![None; graph.id_bound()];
        loop {
            let mut changed = false;
            for (class, node, nc) in &entries {
                let mut total = nc.own.clone();
                let mut ok = true;
                for (k, w) in node.children.iter().zip(&nc.child_weights) {
                    match &best[graph.find(*k).index()] {
                        Some((c, _)) => {
                            if !w.is_zero() {
                                total = total + c.clone() * w.clone();
                            }
                        }
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                if !ok {
                    continue;
                }
                let slot = &mut best[class.index()];
                let better = match slot {
                    None => true,
                    Some((c, n)) => total < *c || (total == *c && *node < n),
                };
                if better {
                    *slot = Some((total, (*node).clone()));
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        Extractor { graph, best }
    }

    pub fn cost(&self, id: Id) -> Option<&S> {
        self.best[self.graph.find(id).index()].as_ref().map(|(c, _)| c)
    }

    pub fn chosen(&self, id: Id) -> Option<&ENode> {
        self.best[self.graph.find(id).index()].as_ref().map(|(_, n)| n)
    }

    pub fn extract(&self, id: Id) -> Result<(Expr, S), ExtractError> {
        let id = self.graph.find(id);
        let cost = self.cost(id).cloned().ok_or(ExtractError::Unextractable(id))?;
        Ok((self.build(id)?, cost))
    }

    fn build(&self, id: Id) -> Result<Expr, ExtractError> {
        let id = self.graph.find(id);
        let node = self.chosen(id).ok_or(ExtractError::Unextractable(id))?;
        let kids = node.children.iter().map(|k| self.build(*k)).collect::<Result<Vec<_>, _>>()?;
        Ok(ENode::join(&node.op, kids))
    }
}

/// Cheapest expression in class `root` and its cost.
pub fn extract<S: CostScalar>(g: &EGraph, root: Id, model: &CostModel) -> Result<(Expr, S), ExtractError> {
    Extractor::new(g, model).extract(root)
}
