//! Trajectory model: tensor tape, GraphSAGE visit encoder, bidirectional
//! LSTM over visits, training with stratified cross-validation and
//! checkpoints.

mod adjacency;
pub mod checkpoint;
mod encoder;
pub mod tensor;
mod train;

pub use adjacency::{build_adjacency, build_adjacency_raw, Adjacency, GraphSwitches};
pub use encoder::{
    encode_trajectory, forward, pool_graph, predict, sage_layer, sage_step, Batch, Dropout, ForwardOutput,
    LstmParams, ModelDims, ParamVars, Projection, SageLayerParams, TrajectoryEncoderParams,
};
pub use tensor::{bce_grad, bce_loss, Gradients, Mat, Tape, Var};
pub use train::{
    build_batch, predict_ensemble, predict_params, stratified_folds, train, Adam, ClassWeight, Ensemble,
    FoldModel, PatientSample, TrainConfig, TrainLogEntry, TrainOutput,
};
