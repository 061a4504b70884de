// Session driver: lease a task, render it, submit, lease the next.
// All state is server-authoritative through leases; a stale lease shows a
// banner with a re-lease action.

import { AnnotationApi, StaleLeaseError } from "./api.js";
import { TaskForm } from "./form.js";
import { applyKey } from "./keyboard.js";
import type { TaskPayload } from "./types.js";
import { renderBanner, renderTask } from "./view.js";

interface Session {
    api: AnnotationApi;
    annotatorId: string;
    root: HTMLElement;
    task: TaskPayload | null;
    form: TaskForm | null;
}

function params(): URLSearchParams {
    return new URLSearchParams(window.location.search);
}

async function nextTask(session: Session): Promise<void> {
    const task = await session.api.leaseTask(session.annotatorId);
    if (task === null) {
        session.root.replaceChildren();
        renderBanner(session.root, "done", "No tasks left. Thank you!");
        session.task = null;
        session.form = null;
        return;
    }
    session.task = task;
    session.form = new TaskForm(task.mode, task.captions.length);
    draw(session);
}

function draw(session: Session): void {
    if (!session.task || !session.form) {
        return;
    }
    renderTask(session.root, session.task, session.form,
        session.api.mediaUrl(session.task), {
            onToggleCaption: (position) => {
                session.form!.toggleCaption(position);
                draw(session);
            },
            onToggleAllBad: () => {
                session.form!.toggleAllBad();
                draw(session);
            },
            onSubmit: () => void submit(session),
        });
}

async function submit(session: Session): Promise<void> {
    if (!session.task || !session.form || !session.form.canSubmit()) {
        return;
    }
    const payload = session.form.toPayload(session.annotatorId);
    try {
        await session.api.submitResult(session.task.task_id, payload);
    } catch (err) {
        if (err instanceof StaleLeaseError) {
            renderBanner(session.root, "warning",
                "Your lease on this task expired.", "Get a new task",
                () => void nextTask(session));
            return;
        }
        renderBanner(session.root, "error", `Submit failed: ${err}`);
        return;
    }
    await nextTask(session);
}

export async function start(): Promise<void> {
    const root = document.getElementById("app");
    if (!root) {
        throw new Error("missing #app element");
    }
    const api = new AnnotationApi(params().get("api") ?? "http://127.0.0.1:8000");
    const annotatorId = params().get("annotator") ?? `anon-${Date.now()}`;
    const session: Session = { api, annotatorId, root, task: null, form: null };

    document.addEventListener("keydown", (event) => {
        if (!session.form) {
            return;
        }
        const wantsSubmit = applyKey(session.form, event.key);
        if (wantsSubmit) {
            void submit(session);
        } else {
            draw(session);
        }
    });

    await nextTask(session);
}

if (typeof document !== "undefined" && document.getElementById("app")) {
    void start();
}
