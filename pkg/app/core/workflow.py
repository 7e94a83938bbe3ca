from pathlib import Path
from typing import Optional, TypedDict

import numpy as np
from langgraph.graph import END, START, StateGraph

from app.core.evaluation import bayes_optimal, classify_and_score, shift_metrics
from app.core.flow import FlowModel
from app.core.semantics import SemanticEmbedder
from app.core.synthesis import SyntheticFeatures, synthesize
from app.core.training import TrainState, train
from app.errors import IntegrityError
from app.logging_config import logger
from app.models import BenchmarkTruth, EvalReport, RunConfig
from app.utils.benchmark import StandardizedTruth, standardize_truth
from app.utils.checkpoint import load_checkpoint, save_checkpoint
from app.utils.data_io import TRUTH_FILE, Dataset, load_data_dir, load_truth

CHECKPOINT_FILE = "checkpoint.gsmf"
TRAIN_LOG_FILE = "train_log.csv"
REPORT_TEXT_FILE = "report.txt"
REPORT_JSON_FILE = "report.json"


class PipelineState(TypedDict):
    """State object for the train / synthesize / evaluate pipeline."""
    config: RunConfig
    data_dir: str
    out_dir: str
    checkpoint_path: Optional[str]
    evaluate: bool
    dataset: Optional[Dataset]
    truth: Optional[StandardizedTruth]
    flow: Optional[FlowModel]
    embedder: Optional[SemanticEmbedder]
    train_state: Optional[TrainState]
    synthetic: Optional[SyntheticFeatures]
    report: Optional[EvalReport]


class PipelineWorkflow:
    """LangGraph-powered GSMFlow pipeline with conditional routing."""

    def __init__(self):
        """Initialize the pipeline graph."""
        self.graph = self._build_workflow_graph()

    def _build_workflow_graph(self):
        """Build workflow with conditional routing."""
        workflow = StateGraph(PipelineState)

        workflow.add_node("load_data", self._load_data_node)
        workflow.add_node("train_model", self._train_model_node)
        workflow.add_node("load_checkpoint", self._load_checkpoint_node)
        workflow.add_node("synthesize", self._synthesize_node)
        workflow.add_node("evaluate", self._evaluate_node)
        workflow.add_node("shift_metrics", self._shift_metrics_node)
        workflow.add_node("write_report", self._write_report_node)

        workflow.add_edge(START, "load_data")
        workflow.add_conditional_edges(
            "load_data",
            self._route_after_load,
            {"train": "train_model", "load": "load_checkpoint"}
        )
        workflow.add_conditional_edges(
            "train_model",
            self._route_after_training,
            {"evaluate": "synthesize", "stop": END}
        )
        workflow.add_edge("load_checkpoint", "synthesize")
        workflow.add_edge("synthesize", "evaluate")
        workflow.add_conditional_edges(
            "evaluate",
            self._route_after_evaluation,
            {"shift": "shift_metrics", "report": "write_report"}
        )
        workflow.add_edge("shift_metrics", "write_report")
        workflow.add_edge("write_report", END)

        return workflow.compile()

    def _load_data_node(self, state: PipelineState) -> PipelineState:
        """Load the dataset and, when present, the benchmark ground truth."""
        logger.info(f"Loading data from {state['data_dir']}")
        dataset = load_data_dir(state["data_dir"])
        truth: Optional[BenchmarkTruth] = load_truth(Path(state["data_dir"]) / TRUTH_FILE)
        state["dataset"] = dataset
        state["truth"] = standardize_truth(truth, dataset.standardization) if truth is not None else None
        return state

    def _route_after_load(self, state: PipelineState) -> str:
        return "load" if state.get("checkpoint_path") else "train"

    def _train_model_node(self, state: PipelineState) -> PipelineState:
        """Build fresh models from the config and train them on seen classes."""
        cfg = state["config"].model_copy(deep=True)
        out_dir = Path(state["out_dir"])
        if cfg.train.log_path is None:
            cfg.train.log_path = str(out_dir / TRAIN_LOG_FILE)
        dataset = state["dataset"]
        rng = np.random.default_rng(cfg.seed)
        embedder = SemanticEmbedder.build(dataset.table, cfg.semantics, seed=cfg.seed, rng=rng)
        flow = FlowModel.build(dataset.dim, embedder.cond_dim, cfg.flow, rng)
        result = train(dataset, flow, embedder, cfg)
        save_checkpoint(out_dir / CHECKPOINT_FILE, result.flow, result.embedder, dataset.table)
        state["flow"] = result.flow
        state["embedder"] = result.embedder
        state["train_state"] = result.state
        return state

    def _route_after_training(self, state: PipelineState) -> str:
        return "evaluate" if state.get("evaluate") else "stop"

    def _load_checkpoint_node(self, state: PipelineState) -> PipelineState:
        """Restore trained models; the checkpoint must match the data."""
        checkpoint = load_checkpoint(state["checkpoint_path"])
        dataset = state["dataset"]
        if checkpoint.flow.dim != dataset.dim:
            raise IntegrityError(
                f"checkpoint expects {checkpoint.flow.dim}-d features, data has {dataset.dim}"
            )
        if checkpoint.table.class_ids != dataset.table.class_ids:
            raise IntegrityError("checkpoint was trained on a different class list")
        state["flow"] = checkpoint.flow
        state["embedder"] = checkpoint.embedder
        return state

    def _synthesize_node(self, state: PipelineState) -> PipelineState:
        """Synthesize unseen-class features from the trained flow."""
        state["dataset"].table.require_gzsl()
        state["synthetic"] = synthesize(
            state["flow"], state["embedder"], state["dataset"].table, state["config"].synth
        )
        return state

    def _evaluate_node(self, state: PipelineState) -> PipelineState:
        """Train the softmax classifiers and score CZSL/GZSL accuracy."""
        state["report"] = classify_and_score(state["dataset"], state["synthetic"], state["config"].classifier)
        return state

    def _route_after_evaluation(self, state: PipelineState) -> str:
        return "shift" if state.get("truth") is not None else "report"

    def _shift_metrics_node(self, state: PipelineState) -> PipelineState:
        """Generation-shift diagnostics and Bayes-optimal calibration."""
        metrics = shift_metrics(state["synthetic"], state["truth"], state["dataset"].table)
        bayes = bayes_optimal(state["dataset"], state["truth"])
        state["report"] = state["report"].model_copy(update={
            **metrics.model_dump(),
            "bayes_seen_acc": bayes.seen_acc,
            "bayes_unseen_acc": bayes.unseen_acc,
            "bayes_harmonic_mean": bayes.harmonic_mean,
        })
        return state

    def _write_report_node(self, state: PipelineState) -> PipelineState:
        """Write metric=value text and its JSON twin."""
        out_dir = Path(state["out_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        report = state["report"]
        (out_dir / REPORT_TEXT_FILE).write_text(report.to_text(), encoding="utf-8")
        (out_dir / REPORT_JSON_FILE).write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
        logger.info(f"Report written to {out_dir}")
        return state

    def run(
        self,
        config: RunConfig,
        data_dir: str,
        out_dir: str,
        checkpoint_path: Optional[str] = None,
        evaluate: bool = True,
    ) -> PipelineState:
        """Run the pipeline; a checkpoint skips training."""
        initial_state: PipelineState = {
            "config": config,
            "data_dir": str(data_dir),
            "out_dir": str(out_dir),
            "checkpoint_path": str(checkpoint_path) if checkpoint_path else None,
            "evaluate": evaluate,
            "dataset": None,
            "truth": None,
            "flow": None,
            "embedder": None,
            "train_state": None,
            "synthetic": None,
            "report": None,
        }
        return self.graph.invoke(initial_state)
