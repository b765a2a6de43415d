"""HTTP service over a trained checkpoint: parse, predict, explain, metrics.

The app is created against a checkpoint + dictionary pair (paths or the
RXNCOND_CHECKPOINT / RXNCOND_DICTIONARY environment variables); endpoints
that need a model answer 409 until one is loaded. The AER metric endpoint
works without any model.
"""

from __future__ import annotations

import os

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict, Field

from .conditions import ConditionDictionary
from .errors import ConfigError, ParseError, ValidationError
from .evaluation import aer
from .graphnet import FeaturizedMolecule
from .interpret import activations, render_svg
from .model import ReactionInputs, ReactionModel, load_checkpoint, predict
from .smiles import parse_smiles

SERVICE_VERSION = "1"


class HealthResponse(BaseModel):
    status: str
    model_loaded: bool

    model_config = ConfigDict(protected_namespaces=())


class ModelInfoResponse(BaseModel):
    architecture: str
    class_num: int
    categories: list[str]
    dictionary_digest: str
    metadata: dict

    model_config = ConfigDict(protected_namespaces=())


class ParseRequest(BaseModel):
    smiles: str


class AtomInfo(BaseModel):
    index: int
    element: str
    charge: int
    aromatic: bool


class ParseResponse(BaseModel):
    atom_count: int
    bond_counts: dict[str, int]
    atoms: list[AtomInfo]


class ReactionRequest(BaseModel):
    reactants: list[str] = Field(min_length=1, max_length=2)
    product: str
    k: int = Field(default=3, ge=1)


class LabelScore(BaseModel):
    label: str
    score: float


class CategoryPrediction(BaseModel):
    category: str
    labels: list[LabelScore]


class PredictResponse(BaseModel):
    categories: list[CategoryPrediction]


class MoleculeExplanation(BaseModel):
    role: str
    smiles: str
    scores: list[float]
    svg: str


class ExplainResponse(BaseModel):
    top1: dict[str, str]
    molecules: list[MoleculeExplanation]


class AerRequest(BaseModel):
    model_accuracy: dict[str, float]
    dummy_accuracy: dict[str, float]
    exclude: list[str] = []

    model_config = ConfigDict(protected_namespaces=())


class AerResponse(BaseModel):
    aer: float
    included: list[str]


def _reaction_inputs(request: ReactionRequest) -> ReactionInputs:
    try:
        return ReactionInputs(
            reactants=[FeaturizedMolecule.from_smiles(s) for s in request.reactants],
            product=FeaturizedMolecule.from_smiles(request.product),
        )
    except ParseError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    except ValidationError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


def _ranked_response(model, inputs, dictionary, k: int) -> PredictResponse:
    ranked = predict(model, inputs, dictionary)
    return PredictResponse(
        categories=[
            CategoryPrediction(
                category=c.name,
                labels=[LabelScore(label=l, score=s) for l, s in c.ranked[:k]],
            )
            for c in ranked.categories
        ]
    )


def create_app(
    checkpoint_path: str | None = None, dictionary_path: str | None = None
) -> FastAPI:
    checkpoint_path = checkpoint_path or os.environ.get("RXNCOND_CHECKPOINT")
    dictionary_path = dictionary_path or os.environ.get("RXNCOND_DICTIONARY")

    app = FastAPI(title="rxncond", version=SERVICE_VERSION)
    app.state.model = None
    app.state.dictionary = None
    app.state.metadata = {}
    if checkpoint_path and dictionary_path:
        model, metadata = load_checkpoint(checkpoint_path)
        dictionary = ConditionDictionary.load(dictionary_path)
        if model.dictionary_digest != dictionary.digest():
            raise ConfigError("checkpoint was trained against a different dictionary")
        app.state.model = model
        app.state.dictionary = dictionary
        app.state.metadata = metadata
    elif checkpoint_path or dictionary_path:
        raise ConfigError("serve needs both a checkpoint and a dictionary, or neither")

    def require_model() -> tuple[ReactionModel, ConditionDictionary]:
        if app.state.model is None:
            raise HTTPException(status_code=409, detail="no model loaded")
        return app.state.model, app.state.dictionary

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", model_loaded=app.state.model is not None)

    @app.get("/model", response_model=ModelInfoResponse)
    def model_info() -> ModelInfoResponse:
        model, dictionary = require_model()
        return ModelInfoResponse(
            architecture=model.gpn_config.architecture,
            class_num=model.class_num,
            categories=dictionary.category_names(),
            dictionary_digest=model.dictionary_digest,
            metadata=app.state.metadata,
        )

    @app.post("/parse", response_model=ParseResponse)
    def parse(request: ParseRequest) -> ParseResponse:
        try:
            graph = parse_smiles(request.smiles)
        except ParseError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return ParseResponse(
            atom_count=graph.n_atoms,
            bond_counts={t.name.lower(): c for t, c in graph.bond_counts().items()},
            atoms=[
                AtomInfo(
                    index=i,
                    element=a.element,
                    charge=a.formal_charge,
                    aromatic=a.aromatic,
                )
                for i, a in enumerate(graph.atoms)
            ],
        )

    @app.post("/predict", response_model=PredictResponse)
    def predict_endpoint(request: ReactionRequest) -> PredictResponse:
        model, dictionary = require_model()
        return _ranked_response(model, _reaction_inputs(request), dictionary, request.k)

    @app.post("/explain", response_model=ExplainResponse)
    def explain(request: ReactionRequest) -> ExplainResponse:
        model, dictionary = require_model()
        inputs = _reaction_inputs(request)
        ranked = predict(model, inputs, dictionary)
        activation_map = activations(model, inputs)
        molecules = []
        for (role, molecule), mol_scores in zip(
            inputs.molecules(), activation_map.molecules
        ):
            molecules.append(
                MoleculeExplanation(
                    role=role,
                    smiles=mol_scores.smiles,
                    scores=mol_scores.scores,
                    svg=render_svg(molecule.graph, mol_scores.scores),
                )
            )
        return ExplainResponse(
            top1={c.name: c.ranked[0][0] for c in ranked.categories},
            molecules=molecules,
        )

    @app.post("/metrics/aer", response_model=AerResponse)
    def aer_endpoint(request: AerRequest) -> AerResponse:
        try:
            value = aer(request.model_accuracy, request.dummy_accuracy, request.exclude)
        except ValidationError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        included = [c for c in request.model_accuracy if c not in set(request.exclude)]
        return AerResponse(aer=value, included=included)

    return app
