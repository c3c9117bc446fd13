from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
import os

from app.core.config import logger

# Routers
from app.routers import experiments

app = FastAPI(title="Flow Lab")

# ---- CORS setup ----
_origins_env = os.getenv("ALLOWED_ORIGINS") or "http://localhost:3000,http://127.0.0.1:3000"
ALLOWED_ORIGINS = [o.strip() for o in _origins_env.split(",") if o.strip()]
app.add_middleware(
    CORSMiddleware,
    allow_origins=ALLOWED_ORIGINS,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# ---- Include routers ----
app.include_router(experiments.router)
logger.info(f"Flow Lab ready, CORS origins: {ALLOWED_ORIGINS}")


@app.get("/")
def root():
    return {"ok": True}
