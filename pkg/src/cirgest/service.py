"""HTTP inference service over prebuilt vector libraries.

Endpoints accept base64 PNG images and run the same feature, retrieval,
and classification paths as the CLI; libraries are loaded once at startup.
"""

import base64
import io
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from PIL import Image
from pydantic import BaseModel, Field

from . import __version__
from .dataset import extract_features, load_library
from .labels import CATEGORIES
from .llm import ProviderConfig, build_prompt, classify as llm_classify
from .retrieval import retrieve_per_class


class HealthResponse(BaseModel):
    status: str
    version: str
    config_hash: str
    categories: list


class ImageRequest(BaseModel):
    image_b64: str = Field(description="base64-encoded grayscale PNG")


class FeatureResponse(BaseModel):
    vector: list


class RetrieveRequest(ImageRequest):
    category: str


class RetrievedItem(BaseModel):
    sample_id: str
    gesture_label: str
    distance: float


class RetrieveResponse(BaseModel):
    category: str
    results: list[RetrievedItem]


class ClassifyRequest(ImageRequest):
    category: str


class ClassifyResponse(BaseModel):
    predicted_label: Optional[str]
    status: str
    reasoning_text: str


def _decode_image(image_b64: str) -> np.ndarray:
    try:
        raw = base64.b64decode(image_b64, validate=True)
        img = Image.open(io.BytesIO(raw))
        return np.asarray(img.convert("L"))
    except Exception as exc:
        raise HTTPException(status_code=400, detail=f"invalid image payload: {exc}")


def create_app(
    libraries: dict,
    image_root: str = "",
    provider: Optional[ProviderConfig] = None,
    config_hash: str = "",
) -> FastAPI:
    """libraries: category -> VectorLibrary (or path to a saved library)."""
    libs = {
        cat: lib if not isinstance(lib, (str, bytes)) else load_library(lib)
        for cat, lib in libraries.items()
    }
    provider = provider or ProviderConfig()
    app = FastAPI(title="cirgest", version=__version__)

    def _library(category: str):
        if category not in CATEGORIES:
            raise HTTPException(status_code=400, detail=f"unknown category: {category}")
        if category not in libs:
            raise HTTPException(status_code=404, detail=f"no library loaded for {category}")
        return libs[category]

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(
            status="ok",
            version=__version__,
            config_hash=config_hash,
            categories=sorted(libs),
        )

    @app.post("/features", response_model=FeatureResponse)
    def features(req: ImageRequest):
        vec = extract_features(_decode_image(req.image_b64))
        return FeatureResponse(vector=[float(v) for v in vec])

    @app.post("/retrieve", response_model=RetrieveResponse)
    def retrieve(req: RetrieveRequest):
        lib = _library(req.category)
        vec = extract_features(_decode_image(req.image_b64))
        results = retrieve_per_class(vec, lib)
        return RetrieveResponse(
            category=req.category,
            results=[
                RetrievedItem(
                    sample_id=r.sample_id,
                    gesture_label=r.gesture_label,
                    distance=r.distance,
                )
                for r in results
            ],
        )

    @app.post("/classify", response_model=ClassifyResponse)
    def classify(req: ClassifyRequest):
        lib = _library(req.category)
        raster = _decode_image(req.image_b64)
        vec = extract_features(raster)
        results = retrieve_per_class(vec, lib)
        exemplars = [_exemplar_raster(image_root, r.sample_id) for r in results]
        bundle = build_prompt(raster, results, req.category, exemplar_images=exemplars)
        outcome = llm_classify(bundle, provider)
        return ClassifyResponse(
            predicted_label=outcome.predicted_label,
            status=outcome.status,
            reasoning_text=outcome.reasoning_text,
        )

    return app


def _exemplar_raster(image_root: str, sample_id: str) -> np.ndarray:
    from pathlib import Path

    from .dataset import read_image

    path = Path(image_root) / f"{sample_id}.png"
    if not path.exists():
        raise HTTPException(
            status_code=500, detail=f"exemplar image missing: {path.name}"
        )
    return read_image(str(path))
