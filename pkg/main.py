"""collodp HTTP API - FastAPI application."""

import asyncio
import logging
import uuid
from contextlib import asynccontextmanager
from fastapi import FastAPI, HTTPException, Request

from config import load_settings
from models.schemas import (
    Document,
    ErrorResponse,
    MechanismConfig,
    PrivatizedRecord,
    PrivatizeRequest,
    TokenizeRequest,
    TokenizeResponse,
)
from services.collocation_service import load_table
from services.corpus_service import load_connectors
from services.embedding_service import load_model
from services.pipeline_service import StrategyConfig, privatize_document
from services.tokenize_service import tokenize_text, total_score
from utils.errors import CollodpError
from utils.log_context import configure_logging, doc_id_var

logger = logging.getLogger(__name__)


def _load_resources(app: FastAPI) -> None:
    """Load tables and models named in the settings; missing ones stay None."""
    settings = load_settings()
    configure_logging(settings.log_level)
    state = app.state
    state.settings = settings
    state.connectors = load_connectors(settings.stopwords)
    state.bigrams = state.trigrams = state.coll_model = state.word_model = None

    loaders = {
        "bigrams": (settings.bigrams, load_table),
        "trigrams": (settings.trigrams, load_table),
        "coll_model": (settings.model, lambda p: load_model(p, settings.cache_dir)),
        "word_model": (settings.word_model, lambda p: load_model(p, settings.cache_dir)),
    }
    for name, (path, loader) in loaders.items():
        if path is None:
            logger.warning(f"No path configured for {name}; dependent endpoints will return 503")
            continue
        try:
            setattr(state, name, loader(path))
        except (CollodpError, OSError) as e:
            logger.error(f"Failed to load {name} from {path}: {e}")


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Lifespan context manager for startup/shutdown."""
    await asyncio.to_thread(_load_resources, app)
    logger.info("collodp API starting up")
    yield
    logger.info("collodp API shutting down")


app = FastAPI(
    title="collodp API",
    description="Collocation-level tokenization and metric-DP text privatization",
    version="1.0.0",
    lifespan=lifespan,
)


@app.middleware("http")
async def add_request_id(request: Request, call_next):
    """Middleware to add request ID to requests."""
    request_id = str(uuid.uuid4())[:8]
    doc_id_var.set(request_id)
    request.state.request_id = request_id
    response = await call_next(request)
    response.headers["X-Request-ID"] = request_id
    return response


def _not_loaded(*names: str) -> HTTPException:
    return HTTPException(
        status_code=503,
        detail=ErrorResponse(
            error_code="RESOURCES_NOT_LOADED",
            message=f"Required resources are not loaded: {', '.join(names)}",
            details={"missing": list(names)},
        ).model_dump(),
    )


def _domain_error(e: CollodpError) -> HTTPException:
    return HTTPException(status_code=400, detail=ErrorResponse(**e.to_dict()).model_dump())


def _internal_error(e: Exception) -> HTTPException:
    logger.error(f"Unexpected error: {e}", exc_info=True)
    return HTTPException(
        status_code=500,
        detail=ErrorResponse(
            error_code="INTERNAL_ERROR",
            message="An unexpected error occurred",
            details={"error": str(e)},
        ).model_dump(),
    )


@app.get("/health")
async def health_check():
    """Health check endpoint with the loaded resources."""
    state = app.state
    return {
        "status": "ok",
        "resources": {
            name: getattr(state, name, None) is not None
            for name in ("bigrams", "trigrams", "coll_model", "word_model")
        },
    }


@app.post("/tokenize", response_model=TokenizeResponse)
async def tokenize(request: TokenizeRequest):
    """Split text into sentences of collocation tokens (GST or MST)."""
    state = app.state
    missing = [n for n in ("bigrams", "trigrams") if getattr(state, n, None) is None]
    if missing:
        raise _not_loaded(*missing)

    try:
        tokenizations = tokenize_text(request.text, state.bigrams, state.trigrams, request.algorithm)
    except CollodpError as e:
        raise _domain_error(e)
    except Exception as e:
        raise _internal_error(e)

    return TokenizeResponse(
        sentences=[t.surfaces for t in tokenizations],
        total_score=sum(total_score(t) for t in tokenizations),
    )


@app.post("/privatize", response_model=PrivatizedRecord)
async def privatize(request: PrivatizeRequest):
    """Privatize one document under the requested strategy."""
    state = app.state
    needed = ("word_model",) if request.strategy == "S1" else ("coll_model", "bigrams", "trigrams")
    missing = [n for n in needed if getattr(state, n, None) is None]
    if missing:
        raise _not_loaded(*missing)

    logger.info(f"Privatizing document {request.id!r} with {request.strategy} at epsilon={request.epsilon}")
    try:
        cfg = StrategyConfig(
            strategy=request.strategy,
            base_epsilon=request.epsilon,
            connectors=state.connectors,
            bigrams=state.bigrams,
            trigrams=state.trigrams,
            word_model=state.word_model,
            coll_model=state.coll_model,
            mechanism=MechanismConfig(kind=request.mechanism, seed=request.seed),
        )
        return await asyncio.to_thread(
            privatize_document,
            Document(id=request.id, text=request.text),
            cfg,
            request.avg_words,
        )
    except CollodpError as e:
        raise _domain_error(e)
    except Exception as e:
        raise _internal_error(e)
