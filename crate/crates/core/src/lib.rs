pub mod ambiguity;
pub mod cli;
pub mod error;
pub mod files;
pub mod fixtures;
pub mod frank_wolfe;
pub mod gradient;
pub mod instance;
pub mod linalg;
pub mod lqg;
pub mod saddle;
pub mod simulate;
pub mod stacked;
pub mod system;
