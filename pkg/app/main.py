# app/main.py
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import ValidationError

from app.api.routes import router as api_router
from app.config import setup_logging
from app.errors import MultiGraphGANError, NumericalError

setup_logging()

app = FastAPI(title="MultiGraphGAN")

app.include_router(api_router, prefix="/api")


# 例外 → HTTP ステータス（入力エラー 400 / 数値エラー・モデル検証 422）


@app.exception_handler(MultiGraphGANError)
async def handle_domain_error(request: Request, exc: MultiGraphGANError) -> JSONResponse:
    status = 422 if isinstance(exc, NumericalError) else 400
    return JSONResponse(status_code=status, content={"error": type(exc).__name__, "detail": str(exc)})


@app.exception_handler(ValidationError)
async def handle_model_error(request: Request, exc: ValidationError) -> JSONResponse:
    detail = exc.errors(include_url=False, include_context=False, include_input=False)
    return JSONResponse(status_code=422, content={"error": "ValidationError", "detail": detail})
