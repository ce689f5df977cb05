import aiosqlite
from typing import Any, Dict, Optional


def cell_key(n: int, deployment: int) -> str:
    return f"{n}:{deployment}"


class Cache:
    """Finished sweep cells, keyed by (N, deployment index) and the config hash that produced them."""

    def __init__(self, path: str) -> None:
        self.path = path
        self.conn: Optional[aiosqlite.Connection] = None

    async def open(self) -> None:
        self.conn = await aiosqlite.connect(self.path)
        await self.conn.execute(
            """
            CREATE TABLE IF NOT EXISTS cells (
                cell TEXT PRIMARY KEY,
                config_hash TEXT,
                n INTEGER,
                deployment INTEGER,
                rows_json TEXT,
                finished_at TEXT,
                status TEXT,
                error TEXT
            )
            """
        )
        await self.conn.commit()

    async def close(self) -> None:
        if self.conn:
            await self.conn.close()
            self.conn = None

    async def get(self, cell: str) -> Optional[Dict[str, Any]]:
        if not self.conn:
            raise RuntimeError("Cache not opened")
        async with self.conn.execute(
            "SELECT cell, config_hash, n, deployment, rows_json, finished_at, status, error FROM cells WHERE cell = ?",
            (cell,),
        ) as cursor:
            row = await cursor.fetchone()
        if not row:
            return None
        return {
            "cell": row[0],
            "config_hash": row[1],
            "n": row[2],
            "deployment": row[3],
            "rows_json": row[4],
            "finished_at": row[5],
            "status": row[6],
            "error": row[7],
        }

    async def upsert(self, cell: str, **fields: Any) -> None:
        if not self.conn:
            raise RuntimeError("Cache not opened")
        data = {
            "cell": cell,
            "config_hash": fields.get("config_hash"),
            "n": fields.get("n"),
            "deployment": fields.get("deployment"),
            "rows_json": fields.get("rows_json"),
            "finished_at": fields.get("finished_at"),
            "status": fields.get("status"),
            "error": fields.get("error"),
        }
        await self.conn.execute(
            """
            INSERT INTO cells (cell, config_hash, n, deployment, rows_json, finished_at, status, error)
            VALUES (:cell, :config_hash, :n, :deployment, :rows_json, :finished_at, :status, :error)
            ON CONFLICT(cell) DO UPDATE SET
                config_hash=COALESCE(excluded.config_hash, cells.config_hash),
                n=COALESCE(excluded.n, cells.n),
                deployment=COALESCE(excluded.deployment, cells.deployment),
                rows_json=COALESCE(excluded.rows_json, cells.rows_json),
                finished_at=COALESCE(excluded.finished_at, cells.finished_at),
                status=COALESCE(excluded.status, cells.status),
                error=COALESCE(excluded.error, cells.error)
            """,
            data,
        )
        await self.conn.commit()

    async def count(self, config_hash: str) -> int:
        if not self.conn:
            raise RuntimeError("Cache not opened")
        async with self.conn.execute(
            "SELECT COUNT(*) FROM cells WHERE config_hash = ? AND status = 'done'", (config_hash,)
        ) as cursor:
            row = await cursor.fetchone()
        return int(row[0])
