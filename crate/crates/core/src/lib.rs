//! Free group endomorphisms: Stallings graphs, graph maps, pullbacks, train
//! tracks and hyperbolicity certificates for their mapping tori.

pub mod certify;
pub mod dynamics;
pub mod error;
pub mod graph;
pub mod graphmap;
pub mod pullback;
pub mod stallings;
pub mod traintrack;
pub mod word;

pub use error::{Error, Result};
pub use graph::{Dir, Edge, Format, LabeledGraph, Path};
pub use graphmap::{FilteredGraphMap, GraphMap, QuotientMap, RelStep};
pub use stallings::{subgroup_graph, SubgroupGraph};
pub use word::{Basis, CyclicWord, EndoFragment, EndoSpec, Letter, Word};
