import os
from typing import Any, Dict, Optional

from dotenv import load_dotenv
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from runner import AVAILABLE_FUNCTIONS, execute_function

load_dotenv()

app = FastAPI(title="Quasi-static fracture API")

origins = [
    "http://localhost:5173",
    "http://localhost:3000",
]

app.add_middleware(
    CORSMiddleware,
    allow_origins=origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


class RunRequest(BaseModel):
    config: Dict[str, Any]
    output_dir: Optional[str] = None


class AuditRequest(BaseModel):
    config: Dict[str, Any]
    run_dir: str


class OracleRequest(BaseModel):
    config: Dict[str, Any]
    step: int = Field(0, ge=0)
    budget: Optional[int] = Field(None, ge=0)
    output_dir: Optional[str] = None


class EnergyRequest(BaseModel):
    config: Dict[str, Any]
    crack: Dict[str, Any]
    time: float = Field(1.0, ge=0, le=1)


@app.post("/run")
def run_evolution(req: RunRequest):
    """Run an evolution with its audits and write the artifacts"""
    print("🔄 /run")
    return execute_function("run_evolution", config=req.config, output_dir=req.output_dir)


@app.post("/audit")
def audit_run(req: AuditRequest):
    """Re-audit a recorded run directory"""
    print(f"🔄 /audit {req.run_dir}")
    return execute_function("audit_run", config=req.config, run_dir=req.run_dir)


@app.post("/oracle")
def oracle(req: OracleRequest):
    print(f"🔄 /oracle step={req.step}")
    return execute_function(
        "oracle_table", config=req.config, step=req.step, budget=req.budget, output_dir=req.output_dir
    )


@app.post("/energy")
def crack_energy(req: EnergyRequest):
    return execute_function("crack_energy", config=req.config, crack=req.crack, time=req.time)


@app.get("/health")
def health_check():
    return {
        "status": "healthy",
        "tools_available": list(AVAILABLE_FUNCTIONS.keys()),
        "output_dir": os.getenv("QSF_OUTPUT_DIR"),
    }


if __name__ == "__main__":
    import uvicorn

    # Get host and port from environment variables (for deployment)
    host = os.getenv("HOST", "0.0.0.0")
    port = int(os.getenv("PORT", 8000))

    print("Starting Quasi-static fracture API...")
    print(f"API available at: http://{host}:{port}")
    print(f"Health check: http://{host}:{port}/health")

    uvicorn.run(app, host=host, port=port)
