// Contract tests against the real annotation service: every form state the
// UI permits must be accepted, invalid states must be rejected, duplicate
// submits must store one result. Each mode gets its own service instance
// built from the demo corpus.

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import net from "node:net";
import os from "node:os";
import path from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { AnnotationApi, InvalidSelectionError, StaleLeaseError } from "../src/api.js";
import { enumerateSubmittableStates } from "../src/form.js";
import type { StudyMode } from "../src/types.js";

interface Service {
    proc: ChildProcess;
    api: AnnotationApi;
    workdir: string;
    port: number;
}

const services: Partial<Record<StudyMode, Service>> = {};

function freePort(): Promise<number> {
    return new Promise((resolve, reject) => {
        const server = net.createServer();
        server.listen(0, "127.0.0.1", () => {
            const address = server.address();
            if (address && typeof address === "object") {
                const port = address.port;
                server.close(() => resolve(port));
            } else {
                reject(new Error("no port assigned"));
            }
        });
    });
}

async function waitForHealth(api: AnnotationApi, proc: ChildProcess,
                             timeoutMs = 150_000): Promise<void> {
    const deadline = Date.now() + timeoutMs;
    let exited = false;
    proc.once("exit", () => { exited = true; });
    while (Date.now() < deadline) {
        if (exited) {
            throw new Error("service process exited before becoming healthy");
        }
        try {
            const resp = await fetch(`${api.baseUrl}/health`);
            if (resp.ok) {
                return;
            }
        } catch {
            // not up yet
        }
        await new Promise((r) => setTimeout(r, 300));
    }
    throw new Error("service did not become healthy in time");
}

async function startService(mode: StudyMode): Promise<Service> {
    const port = await freePort();
    const workdir = mkdtempSync(path.join(os.tmpdir(), `annot-${mode}-`));
    const proc = spawn("python3", [
        "-m", "vidcap.cli", "serve", "--demo",
        "--workdir", workdir,
        "--mode", mode,
        "--port", String(port),
        "--annotators-per-task", "100000",
        "--seed", "0",
    ], { stdio: ["ignore", "pipe", "pipe"] });
    proc.stderr?.on("data", () => { /* keep the pipe drained */ });
    proc.stdout?.on("data", () => { /* keep the pipe drained */ });
    const api = new AnnotationApi(`http://127.0.0.1:${port}`);
    await waitForHealth(api, proc);
    return { proc, api, workdir, port };
}

beforeAll(async () => {
    services.every_good = await startService("every_good");
    services.best_caption = await startService("best_caption");
});

afterAll(() => {
    for (const service of Object.values(services)) {
        if (!service) continue;
        service.proc.kill("SIGTERM");
        rmSync(service.workdir, { recursive: true, force: true });
    }
});

describe.each(["every_good", "best_caption"] as const)("mode %s", (mode) => {
    it("accepts every form state the UI permits", async () => {
        const api = services[mode]!.api;
        const probe = await api.leaseTask(`probe-${mode}`);
        expect(probe).not.toBeNull();
        const captionCount = probe!.captions.length;
        expect(probe!.captions.length).toBeLessThanOrEqual(
            probe!.max_captions_per_page);
        await api.submitResult(probe!.task_id,
            { annotator_id: `probe-${mode}`, positions: [0], all_bad: false });

        const states = enumerateSubmittableStates(mode, captionCount, "");
        for (let i = 0; i < states.length; i++) {
            const annotator = `enum-${mode}-${i}`;
            const task = await api.leaseTask(annotator);
            expect(task).not.toBeNull();
            const payload = { ...states[i], annotator_id: annotator };
            const resp = await api.submitResult(task!.task_id, payload);
            expect(resp.stored).toBe(true);
        }
    });

    it("rejects the states the UI makes unreachable", async () => {
        const api = services[mode]!.api;
        const annotator = `invalid-${mode}`;
        const task = await api.leaseTask(annotator);
        expect(task).not.toBeNull();
        // Selections plus All Bad: blocked in the form, rejected by the service.
        await expect(api.submitResult(task!.task_id, {
            annotator_id: annotator, positions: [0], all_bad: true,
        })).rejects.toBeInstanceOf(InvalidSelectionError);
        // Empty submit without All Bad: the form disables the button.
        await expect(api.submitResult(task!.task_id, {
            annotator_id: annotator, positions: [], all_bad: false,
        })).rejects.toBeInstanceOf(InvalidSelectionError);
        // Out-of-range position cannot happen in the form either.
        await expect(api.submitResult(task!.task_id, {
            annotator_id: annotator, positions: [task!.captions.length],
            all_bad: false,
        })).rejects.toBeInstanceOf(InvalidSelectionError);
        // The lease survives rejected submissions.
        const resp = await api.submitResult(task!.task_id, {
            annotator_id: annotator, positions: [0], all_bad: false,
        });
        expect(resp.stored).toBe(true);
    });

    it("stores one result for duplicate submits", async () => {
        const api = services[mode]!.api;
        const annotator = `dup-${mode}`;
        const task = await api.leaseTask(annotator);
        const payload = { annotator_id: annotator, positions: [1], all_bad: false };
        const first = await api.submitResult(task!.task_id, payload);
        const second = await api.submitResult(task!.task_id, payload);
        expect(first.selection).toEqual(second.selection);
        expect(second.progress.submitted).toBe(1);
    });

    it("rejects submissions without a live lease as stale", async () => {
        const api = services[mode]!.api;
        const victim = await api.leaseTask(`victim-${mode}`);
        await expect(api.submitResult(victim!.task_id, {
            annotator_id: `intruder-${mode}`, positions: [0], all_bad: false,
        })).rejects.toBeInstanceOf(StaleLeaseError);
        // Re-lease flow: the victim still holds the task and can finish it.
        const again = await api.leaseTask(`victim-${mode}`);
        expect(again!.task_id).toBe(victim!.task_id);
        const resp = await api.submitResult(again!.task_id, {
            annotator_id: `victim-${mode}`, positions: [0], all_bad: false,
        });
        expect(resp.stored).toBe(true);
    });

    it("serves a PNG preview strip for leased clips", async () => {
        const service = services[mode]!;
        const task = await service.api.leaseTask(`media-${mode}`);
        const resp = await fetch(service.api.mediaUrl(task!));
        expect(resp.status).toBe(200);
        expect(resp.headers.get("content-type")).toBe("image/png");
        const bytes = new Uint8Array(await resp.arrayBuffer());
        // PNG magic
        expect([...bytes.slice(0, 4)]).toEqual([0x89, 0x50, 0x4e, 0x47]);
    });
});

describe("caption display order", () => {
    it("the payload's caption list is the display order; the UI never re-sorts", async () => {
        const api = services.best_caption!.api;
        // Re-leasing while holding a live lease returns the same task with
        // the same display order.
        const a = await api.leaseTask("order-check");
        const b = await api.leaseTask("order-check");
        expect(a!.task_id).toBe(b!.task_id);
        expect(a!.captions).toEqual(b!.captions);

        // A different annotator later sees the same task in the same order.
        await api.submitResult(a!.task_id,
            { annotator_id: "order-check", positions: [0], all_bad: false });
        const c = await api.leaseTask("order-check-2");
        expect(c!.task_id).toBe(a!.task_id);
        expect(c!.captions).toEqual(a!.captions);
    });
});
