import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from app.api.estimation import router as estimation_router
from app.config import config

config.setup_logging()
logger = logging.getLogger(__name__)

SERVICE_NAME = "Tumor Invasion Parameter Estimation Service"
SERVICE_VERSION = "1.0.0"


@asynccontextmanager
async def lifespan(app: FastAPI):
    config.initialize()
    logger.info(
        f"{SERVICE_NAME} {SERVICE_VERSION} starting: cache={'on' if config.CACHE_ENABLED else 'off'} "
        f"({config.CACHE_DIR}), concurrent solves={config.MAX_CONCURRENT_SOLVES}, "
        f"delta1 in {config.bounds()}, default grid nod={config.DEFAULT_NOD} tau={config.DEFAULT_TAU}"
    )
    yield
    logger.info(f"{SERVICE_NAME} stopped")


app = FastAPI(
    title=SERVICE_NAME,
    description="Forward solves, adjoint gradients and delta1 fits for the acid-mediated invasion model",
    version=SERVICE_VERSION,
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=config.ALLOWED_ORIGINS,
    allow_credentials=True,
    allow_methods=["GET", "POST", "OPTIONS"],
    allow_headers=["Content-Type", "Accept"],
)


@app.exception_handler(RequestValidationError)
async def validation_exception_handler(request: Request, exc: RequestValidationError):
    """Invalid parameters are client errors (400), not solver failures (422)"""
    messages = "; ".join(
        f"{'.'.join(str(part) for part in err.get('loc', ()))}: {err.get('msg', '')}" for err in exc.errors()
    )
    logger.warning(f"Rejected {request.url.path}: {messages}")
    return JSONResponse(status_code=400, content={"error": "Invalid request", "detail": messages})


app.include_router(estimation_router, tags=["estimation"])


@app.get("/", tags=["health"])
async def root():
    return {"service": SERVICE_NAME, "status": "operational", "version": SERVICE_VERSION}


@app.get("/health", tags=["health"])
async def health_check():
    """Service status and the solver settings requests fall back to"""
    lo, hi = config.bounds()
    return {
        "status": "healthy",
        "cache_enabled": config.CACHE_ENABLED,
        "cache_dir": str(config.CACHE_DIR),
        "max_workers": config.MAX_WORKERS,
        "max_concurrent_solves": config.MAX_CONCURRENT_SOLVES,
        "newton_tol": config.NEWTON_TOL,
        "delta1_bounds": [lo, hi],
        "default_grid": {"nod": config.DEFAULT_NOD, "tau": config.DEFAULT_TAU, "t_final": config.DEFAULT_T_FINAL},
    }


if __name__ == "__main__":
    import uvicorn

    uvicorn.run("app.main:app", host=config.HOST, port=config.PORT)
