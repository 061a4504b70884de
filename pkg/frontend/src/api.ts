// Thin client over the annotation service. Submits are idempotent on the
// service side per (task_id, annotator_id), so network retries replay the
// same body; a 409 means the lease went stale and the caller should re-lease.

import type { SubmitPayload, SubmitResponse, TaskPayload } from "./types.js";

export class StaleLeaseError extends Error {}
export class PoolExhaustedError extends Error {}
export class InvalidSelectionError extends Error {}

export interface FetchLike {
    (input: string, init?: RequestInit): Promise<Response>;
}

export class AnnotationApi {
    readonly baseUrl: string;
    private fetchFn: FetchLike;
    retries = 3;
    retryDelayMs = 250;

    constructor(baseUrl: string, fetchFn: FetchLike = fetch) {
        this.baseUrl = baseUrl.replace(/\/+$/, "");
        this.fetchFn = fetchFn;
    }

    mediaUrl(task: TaskPayload): string {
        return `${this.baseUrl}${task.media_url}`;
    }

    /** Lease the next task, or null when the pool is exhausted. */
    async leaseTask(annotatorId: string): Promise<TaskPayload | null> {
        const url = `${this.baseUrl}/tasks/lease?annotator=${encodeURIComponent(annotatorId)}`;
        const resp = await this.fetchFn(url);
        if (resp.status === 404) {
            return null;
        }
        if (!resp.ok) {
            throw new Error(`lease failed: HTTP ${resp.status}`);
        }
        return (await resp.json()) as TaskPayload;
    }

    /**
     * Submit a result. Network failures retry with the identical body; the
     * service stores at most one result per (task, annotator), so a retried
     * double-send cannot create duplicates.
     */
    async submitResult(taskId: string, payload: SubmitPayload): Promise<SubmitResponse> {
        const url = `${this.baseUrl}/tasks/${encodeURIComponent(taskId)}/result`;
        const body = JSON.stringify(payload);
        let lastError: unknown = null;
        for (let attempt = 0; attempt < this.retries; attempt++) {
            let resp: Response;
            try {
                resp = await this.fetchFn(url, {
                    method: "POST",
                    headers: { "Content-Type": "application/json" },
                    body,
                });
            } catch (err) {
                lastError = err;
                await delay(this.retryDelayMs * 2 ** attempt);
                continue;
            }
            if (resp.status === 409) {
                throw new StaleLeaseError(await errorMessage(resp));
            }
            if (resp.status === 400) {
                throw new InvalidSelectionError(await errorMessage(resp));
            }
            if (!resp.ok) {
                throw new Error(`submit failed: HTTP ${resp.status}`);
            }
            return (await resp.json()) as SubmitResponse;
        }
        throw new Error(`submit failed after ${this.retries} attempts: ${lastError}`);
    }

    async selectiveRates(): Promise<Record<string, number>> {
        const resp = await this.fetchFn(`${this.baseUrl}/stats/selective-rates`);
        if (!resp.ok) {
            throw new Error(`rates failed: HTTP ${resp.status}`);
        }
        return (await resp.json()) as Record<string, number>;
    }
}

async function errorMessage(resp: Response): Promise<string> {
    try {
        const body = await resp.json();
        return body?.detail?.message ?? JSON.stringify(body);
    } catch {
        return `HTTP ${resp.status}`;
    }
}

function delay(ms: number): Promise<void> {
    return new Promise((resolve) => setTimeout(resolve, ms));
}
